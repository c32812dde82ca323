"""Mask-driven MVDR beamforming and a delay-and-sum baseline.

Shapes: observation bins (C, F, T); masks (F, T); covariances (F, M, M);
beamformer weights (F, M). Filters are applied per bin as the conjugate
inner product sum_i conj(h_i) * y_i, so a distortionless filter passes the
reference-channel source image unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .stft import Spectrogram

DIAGONAL_LOADING = 1e-6
LAMBDA_THRESHOLD = 1e-8


@dataclass(frozen=True)
class SpatialCovariance:
    """Per-frequency Hermitian covariance estimates with their mask weight."""

    matrices: np.ndarray  # (F, M, M) complex
    weight: np.ndarray  # (F,) accumulated mask weight
    degenerate: np.ndarray  # (F,) bool, True where the weight vanished

    @property
    def channel_count(self):
        return self.matrices.shape[1]


@dataclass(frozen=True)
class BeamformerWeights:
    """Per-frequency filter vectors; degenerate bins fall back to passthrough."""

    weights: np.ndarray  # (F, M) complex
    ref_channel: int
    degenerate: np.ndarray  # (F,) bool

    @property
    def degenerate_count(self):
        return int(self.degenerate.sum())


def estimate_covariance(spec: Spectrogram, mask, kind) -> SpatialCovariance:
    """Mask-weighted spatial covariance, normalized by the summed weight.

    kind="speech" weights bin (omega, t) by mask(omega, t); kind="noise"
    weights it by 1 - mask(omega, t), i.e. the mask is read as a speech-
    presence bound whose complement marks definite noise. Frequencies whose
    weights sum to (numerically) zero are flagged degenerate and hold an
    identity placeholder.
    """
    mask = np.asarray(mask, dtype=np.float64)
    c, f, t = spec.bins.shape
    if mask.shape != (f, t):
        raise ValueError(f"mask shape {mask.shape} does not match spectrogram ({f}, {t})")
    if kind == "speech":
        w = mask
    elif kind == "noise":
        w = 1.0 - mask
    else:
        raise ValueError(f"kind must be 'speech' or 'noise', got {kind!r}")

    obs = spec.bins.transpose(1, 0, 2)  # (F, C, T)
    weight = w.sum(axis=1)  # (F,)
    psd = np.einsum("ft,fct,fdt->fcd", w, obs, obs.conj())
    degenerate = weight <= 1e-12 * t
    safe = np.where(degenerate, 1.0, weight)
    psd /= safe[:, None, None]
    psd = 0.5 * (psd + psd.conj().transpose(0, 2, 1))  # enforce Hermitian symmetry
    psd[degenerate] = np.eye(c)
    return SpatialCovariance(matrices=psd, weight=weight, degenerate=degenerate)


def mvdr_weights(cov_noise: SpatialCovariance, cov_speech: SpatialCovariance,
                 ref_channel, diagonal_loading=DIAGONAL_LOADING,
                 lambda_threshold=LAMBDA_THRESHOLD) -> BeamformerWeights:
    """Reference-channel MVDR filter from speech/noise covariances.

    Per frequency: with N the (diagonally loaded) noise covariance and S the
    speech covariance, the filter is h = N^{-1} S e_ref / trace(N^{-1} S).
    Bins whose trace falls below lambda_threshold (no usable speech energy),
    or whose covariances were degenerate, fall back to h = e_ref.
    """
    f, m, _ = cov_noise.matrices.shape
    if cov_speech.matrices.shape != (f, m, m):
        raise ValueError("speech and noise covariances have different shapes")
    if not 0 <= ref_channel < m:
        raise IndexError(f"reference channel {ref_channel} out of range for {m} channels")

    weights = np.zeros((f, m), dtype=np.complex128)
    degenerate = np.zeros(f, dtype=bool)
    e_ref = np.zeros(m)
    e_ref[ref_channel] = 1.0
    identity = np.eye(m)
    for fi in range(f):
        if cov_noise.degenerate[fi] or cov_speech.degenerate[fi]:
            weights[fi] = e_ref
            degenerate[fi] = True
            continue
        phi_n = cov_noise.matrices[fi]
        loaded = phi_n + diagonal_loading * (np.trace(phi_n).real / m) * identity
        try:
            numerator = np.linalg.solve(loaded, cov_speech.matrices[fi])
        except np.linalg.LinAlgError:
            weights[fi] = e_ref
            degenerate[fi] = True
            continue
        lam = np.trace(numerator)
        if abs(lam) < lambda_threshold or not np.isfinite(lam):
            weights[fi] = e_ref
            degenerate[fi] = True
            continue
        if m == 1:
            weights[fi] = e_ref  # the quotient reduces to 1 exactly
        else:
            weights[fi] = numerator @ e_ref / lam
    return BeamformerWeights(weights=weights, ref_channel=ref_channel, degenerate=degenerate)


def apply_beamformer(spec: Spectrogram, bf: BeamformerWeights, post_mask) -> Spectrogram:
    """Filter and post-mask the observation into a single-channel spectrogram.

    Per bin: out(omega, t) = post_mask(omega, t) * sum_i conj(h_i(omega)) *
    y_i(omega, t).
    """
    c, f, t = spec.bins.shape
    post_mask = np.asarray(post_mask, dtype=np.float64)
    if bf.weights.shape != (f, c):
        raise ValueError(f"weights shape {bf.weights.shape} does not match spectrogram")
    if post_mask.shape != (f, t):
        raise ValueError(f"post mask shape {post_mask.shape} does not match spectrogram")
    out = np.einsum("fc,cft->ft", bf.weights.conj(), spec.bins)
    out *= post_mask
    return spec.replace_bins(out[None])


def delay_and_sum(spec: Spectrogram, tdoas, weights=None) -> Spectrogram:
    """Align channels by their delays and average them.

    tdoas[i] is the delay (samples) of channel i relative to the target;
    each channel is advanced by its delay before the weighted sum:
    out = (1 / sum w) * sum_i w_i e^{+j omega tau_i} y_i.
    """
    c, f, t = spec.bins.shape
    tdoas = np.asarray(tdoas, dtype=np.float64)
    if tdoas.shape != (c,):
        raise ValueError(f"need one tdoa per channel, got shape {tdoas.shape}")
    if weights is None:
        weights = np.ones(c)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (c,):
        raise ValueError(f"need one weight per channel, got shape {weights.shape}")
    total = weights.sum()
    if total == 0:
        raise ValueError("channel weights sum to zero")
    window_size = 2 * (f - 1)
    omega = 2.0 * np.pi * np.arange(f) / window_size
    phase = np.exp(1j * omega[None, :] * tdoas[:, None])  # (C, F)
    out = np.einsum("c,cf,cft->ft", weights, phase, spec.bins) / total
    return spec.replace_bins(out[None])


def gcc_phat_tdoa(spec: Spectrogram, channel, ref_channel, max_lag, step=0.25):
    """Delay of `channel` relative to `ref_channel` via phase-transform fit.

    Scans lags in [-max_lag, max_lag] for the peak of the whitened cross-
    correlation, then refines the peak by a parabola. Positive values mean
    the channel lags the reference.
    """
    if channel == ref_channel:
        return 0.0
    cross = spec.bins[channel] * np.conj(spec.bins[ref_channel])
    ipd = np.angle(cross)
    f = spec.freq_count
    omega = 2.0 * np.pi * np.arange(f) / (2 * (f - 1))
    lags = np.arange(-max_lag, max_lag + step / 2, step)
    scores = np.array([np.cos(ipd + omega[:, None] * lag).sum() for lag in lags])
    best = int(np.argmax(scores))
    lag = lags[best]
    if 0 < best < len(lags) - 1:
        denom = scores[best - 1] - 2.0 * scores[best] + scores[best + 1]
        if denom < 0:
            lag += 0.5 * (scores[best - 1] - scores[best + 1]) / denom * step
    return float(lag)
