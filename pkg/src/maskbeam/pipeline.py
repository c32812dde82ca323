"""End-to-end enhancement systems and their shared plumbing.

Every mode runs STFT -> (spatial clustering) -> (per-channel mask cleaning)
-> mask fusion -> covariances -> MVDR -> post-filter -> inverse STFT, with
stages dropped according to the mode:

    noisy       reference-channel passthrough
    das         delay-and-sum with phase-transform TDOA estimates
    messl       MVDR driven by the raw spatial-clustering mask
    lstm        MVDR driven by the cleaned per-channel masks only
    messl+lstm  cleaned masks fused together with the spatial mask

Spatial-clustering masks are cached on disk keyed by a content hash of the
input samples and the clustering settings, so model experiments do not
recompute the EM.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip
from .beamform import (
    apply_beamformer,
    delay_and_sum,
    estimate_covariance,
    gcc_phat_tdoa,
    mvdr_weights,
)
from .config import RunConfig
from .fusion import MaskSet, fuse_noise, fuse_post, fuse_speech
from .maskio import load_mask, save_mask
from .refiner import forward, logit_transform
from .refiner.serialize import ModelBundle
from .spatial import default_tdoa_grid, run_em
from .stft import analyze, synthesize, to_features


@dataclass
class RunLog:
    """Per-stage timings and diagnostics for one utterance."""

    stages: list = field(default_factory=list)  # (name, seconds)
    notes: list = field(default_factory=list)

    def stage(self, name, seconds):
        self.stages.append((name, seconds))

    def note(self, text):
        self.notes.append(text)

    def render(self):
        lines = [f"{name}: {seconds:.3f}s" for name, seconds in self.stages]
        lines += self.notes
        return "\n".join(lines) + "\n"


class _Timer:
    def __init__(self, log, name):
        self.log, self.name = log, name

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.log.stage(self.name, time.perf_counter() - self.start)
        return False


def _spatial_cache_key(clip: AudioClip, cfg: RunConfig):
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(clip.samples).tobytes())
    settings = (
        f"{clip.sample_rate},{cfg.window_size},{cfg.hop_size},{cfg.window_kind},"
        f"{cfg.em_sources},{cfg.em_iterations},{cfg.tdoa_span()},{cfg.em_tdoa_step},"
        f"{cfg.em_pair_pooling},{sorted(cfg.exclude_channels)}"
    )
    digest.update(settings.encode())
    return digest.hexdigest()


def spatial_mask(clip: AudioClip, spec, cfg: RunConfig, log: RunLog = None):
    """Target-source clustering mask for a mixture, cached when configured."""
    log = log or RunLog()
    cache_path = None
    if cfg.cache_dir:
        cache_path = Path(cfg.cache_dir) / f"{_spatial_cache_key(clip, cfg)}.mask"
        if cache_path.exists():
            mask, _ = load_mask(cache_path)
            log.note("spatial mask: cache hit")
            return mask
    pairs = None
    if cfg.em_pair_pooling and spec.channel_count > 2:
        pairs = tuple((0, j) for j in range(1, spec.channel_count))
    grid = default_tdoa_grid(cfg.window_size, cfg.em_tdoa_step)
    span = cfg.tdoa_span()
    grid = grid[(grid >= -span) & (grid <= span)]
    with _Timer(log, "spatial clustering"):
        result = run_em(
            spec, n_sources=cfg.em_sources, n_iters=cfg.em_iterations,
            tdoa_grid=grid, pairs=pairs,
        )
    mask = result.target_mask
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        save_mask(cache_path, mask, cfg.window_size, cfg.hop_size)
        log.note("spatial mask: cache store")
    return mask


def refine_channels(spec, spatial, bundle: ModelBundle, log: RunLog = None):
    """Run the mask cleaner on every channel independently."""
    log = log or RunLog()
    logits = logit_transform(spatial, bundle.logit_eps)
    cleaned = []
    with _Timer(log, "mask refinement"):
        for ch in range(spec.channel_count):
            stats = bundle.stats if bundle.feature_norm == "corpus" else None
            feats = to_features(spec, ch, stats)
            cleaned.append(forward(feats.values, logits, bundle.params, mode="infer"))
    return cleaned


def enhance(clip: AudioClip, cfg: RunConfig, bundle: ModelBundle = None):
    """Enhance one multichannel clip; returns (AudioClip, RunLog)."""
    log = RunLog()
    if clip.channel_count <= cfg.reference_channel:
        raise ValueError(
            f"reference channel {cfg.reference_channel} needs at least "
            f"{cfg.reference_channel + 1} channels, input has {clip.channel_count}"
        )
    if cfg.mode in ("lstm", "messl+lstm") and bundle is None:
        raise ValueError(f"mode {cfg.mode} requires a trained model file")

    if cfg.mode == "noisy":
        log.note("passthrough of reference channel")
        return clip.channel(cfg.reference_channel), log

    keep = [c for c in range(clip.channel_count) if c not in cfg.exclude_channels]
    ref = keep.index(cfg.reference_channel)
    working = clip.select_channels(keep)

    with _Timer(log, "stft"):
        spec = analyze(working, cfg.stft())

    if cfg.mode == "das":
        with _Timer(log, "tdoa estimation"):
            span = cfg.tdoa_span()
            tdoas = np.array(
                [gcc_phat_tdoa(spec, c, ref, max_lag=span) for c in range(len(keep))]
            )
        with _Timer(log, "delay and sum"):
            out_spec = delay_and_sum(spec, tdoas)
        with _Timer(log, "istft"):
            out = synthesize(out_spec, cfg.stft())
        return out, log

    m_spatial = spatial_mask(working, spec, cfg, log)

    if cfg.mode == "messl":
        mask_set = MaskSet(cleaned=(), spatial=m_spatial)
    else:
        cleaned = refine_channels(spec, m_spatial, bundle, log)
        spatial_in = m_spatial if cfg.mode == "messl+lstm" else None
        mask_set = MaskSet(cleaned=tuple(cleaned), spatial=spatial_in)

    with _Timer(log, "fusion"):
        m_speech = fuse_speech(mask_set)
        m_noise = fuse_noise(mask_set)
        m_post = fuse_post(mask_set)
    with _Timer(log, "covariances"):
        cov_s = estimate_covariance(spec, m_speech, kind="speech")
        cov_n = estimate_covariance(spec, m_noise, kind="noise")
    with _Timer(log, "mvdr"):
        bf = mvdr_weights(cov_n, cov_s, ref)
    log.note(f"degenerate bins: {bf.degenerate_count}/{spec.freq_count}")
    with _Timer(log, "beamform + post-filter"):
        out_spec = apply_beamformer(spec, bf, m_post)
    with _Timer(log, "istft"):
        out = synthesize(out_spec, cfg.stft())
    return out, log
