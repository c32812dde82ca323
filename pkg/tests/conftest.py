"""Shared fixtures: desk-scale scenes and a session-wide trained mask cleaner."""

import time

import numpy as np
import pytest

from maskbeam.refiner import (
    TrainConfig,
    TrainingBatch,
    forward,
    ideal_amplitude_mask,
    init_params,
    logit_transform,
    train,
)
from maskbeam.refiner.serialize import ModelBundle
from maskbeam.refiner.training import validation_bce
from maskbeam.metrics import mask_scores
from maskbeam.simulate import SourceSpec, mix, speech_like, white_noise
from maskbeam.spatial import default_tdoa_grid, run_em
from maskbeam.stft import StftConfig, analyze, feature_stats, magnitude_db, to_features

# Desk-scale frame of reference used across the suite: 6 channels at 8 kHz,
# 0.75 s utterances, 128-sample windows (F = 65).
RATE = 8000
N_SAMPLES = 6000
CHANNELS = 6
WINDOW, HOP = 128, 32
STFT = StftConfig(WINDOW, HOP)
GRID = default_tdoa_grid(WINDOW)


def make_scene(rng, snr_lo=0.0, snr_hi=10.0, channels=CHANNELS, num_samples=N_SAMPLES,
               interferer_gain=1.0):
    """Target talker at near-zero TDOA plus one off-axis interferer and noise.

    The interferer delays alternate between two values so every adjacent
    channel pair sees the full TDOA while the total spread stays small
    relative to the analysis window.
    """
    m = channels
    target = SourceSpec(
        speech_like(rng, num_samples, RATE),
        delays=2.0 + rng.uniform(-0.15, 0.15, m),
        gains=np.full(m, 1.0),
    )
    tau = rng.uniform(3.0, 6.0) * rng.choice([-1.0, 1.0])
    interferer = SourceSpec(
        speech_like(rng, num_samples, RATE),
        delays=8.0 + abs(tau) + tau * (np.arange(m) % 2) + rng.uniform(-0.1, 0.1, m),
        gains=np.full(m, interferer_gain),
    )
    noise = white_noise(rng, num_samples, RATE, channels=m)
    return mix([target, interferer], noise, snr_db=rng.uniform(snr_lo, snr_hi))


def spatial_target_mask(spec, n_iters=20):
    return run_em(spec, n_sources=2, n_iters=n_iters, tdoa_grid=GRID).target_mask


@pytest.fixture(scope="session")
def desk_model():
    """Train the tiny refiner on 50 synthetic utterances; report its metrics.

    Returns a dict with the trained ModelBundle plus the quantities the
    acceptance suite checks: held-out BCE before/after training, hit rates
    of the raw clustering mask and the refined masks, and wall time.
    """
    t_start = time.time()
    rng = np.random.default_rng(42)
    n_train_utts, n_val_utts = 40, 10
    train_raw, val_raw, db_planes = [], [], []
    for i in range(n_train_utts + n_val_utts):
        truth = make_scene(rng)
        spec = analyze(truth.mixture, STFT)
        spec_clean = analyze(truth.source_images[0], STFT)
        m_spatial = spatial_target_mask(spec)
        logits = logit_transform(m_spatial)
        for ch in range(CHANNELS):
            rec = {
                "spec": spec,
                "ch": ch,
                "logits": logits,
                "spatial": m_spatial,
                "target": ideal_amplitude_mask(spec_clean.bins[ch], spec.bins[ch]),
            }
            if i < n_train_utts:
                train_raw.append(rec)
                db_planes.append(magnitude_db(spec, ch))
            else:
                val_raw.append(rec)

    stats = feature_stats(db_planes)

    def finalize(recs):
        return [
            TrainingBatch(
                features=to_features(r["spec"], r["ch"], stats).values,
                logit_mask=r["logits"],
                target=r["target"],
            )
            for r in recs
        ]

    train_set, val_set = finalize(train_raw), finalize(val_raw)
    params = init_params(
        STFT.freq_count, hidden=16, n_layers=1, dropout_rate=0.2,
        l2_coefficient=1e-5, rng=np.random.default_rng(0),
    )
    initial_bce = validation_bce(val_set, params)
    result = train(
        train_set, val_set, params,
        TrainConfig(epochs=40, learning_rate=3e-3, patience=5, batch_size=24, seed=1),
    )

    em_hits, refined_hits = [], []
    for rec, batch in zip(val_raw, val_set):
        em_hits.append(mask_scores(rec["spatial"], batch.target)[1])
        pred = forward(batch.features, batch.logit_mask, result.params, mode="infer")
        refined_hits.append(mask_scores(pred, batch.target)[1])

    return {
        "bundle": ModelBundle(params=result.params, stats=stats),
        "initial_bce": float(initial_bce),
        "best_bce": float(result.best_val_bce),
        "em_hit_rate": float(np.mean(em_hits)),
        "refined_hit_rate": float(np.mean(refined_hits)),
        "history": result.history,
        "seconds": time.time() - t_start,
    }
