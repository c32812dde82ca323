"""Short-time Fourier analysis/synthesis and log-spectral features.

Shape conventions:
    AudioClip buffers  (C, N)   channels x samples
    Spectrogram bins   (C, F, T) channels x frequencies x frames
    masks / features   (F, T)

Frequency bin f corresponds to omega = 2*pi*f / window_size rad/sample,
F = window_size // 2 + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip

# Relative floor applied before the dB conversion so silent bins stay finite.
DB_EPS_RELATIVE = 1e-10


def _hann_periodic(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


_WINDOWS = {
    "sqrt_hann": lambda n: np.sqrt(_hann_periodic(n)),
    "hann": _hann_periodic,
}


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis framing; the same window is used on both sides."""

    window_size: int = 1024
    hop_size: int = 256
    window_kind: str = "sqrt_hann"

    def __post_init__(self):
        if self.window_size <= 0:
            raise ValueError("window_size must be positive")
        if not 0 < self.hop_size <= self.window_size:
            raise ValueError(
                f"need 0 < hop_size <= window_size, got hop={self.hop_size} window={self.window_size}"
            )
        if self.window_kind not in _WINDOWS:
            raise ValueError(f"unknown window_kind {self.window_kind!r}")

    @property
    def freq_count(self):
        return self.window_size // 2 + 1

    def window(self):
        return _WINDOWS[self.window_kind](self.window_size)

    def frame_duration(self, sample_rate):
        """Time span of one analysis frame, in seconds."""
        return self.window_size / sample_rate

    def omega(self):
        """Angular frequency of each bin in rad/sample, shape (F,)."""
        return 2.0 * np.pi * np.arange(self.freq_count) / self.window_size


@dataclass(frozen=True)
class Spectrogram:
    """Complex time-frequency planes, one per channel."""

    bins: np.ndarray  # (C, F, T) complex128
    sample_rate: int
    window_size: int
    hop_size: int

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim == 2:
            bins = bins[None]
        if bins.ndim != 3:
            raise ValueError(f"expected (C, F, T) bins, got ndim={bins.ndim}")
        if bins.shape[1] != self.window_size // 2 + 1:
            raise ValueError(
                f"freq count {bins.shape[1]} inconsistent with window {self.window_size}"
            )
        if not np.all(np.isfinite(bins)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "bins", bins)

    @property
    def channel_count(self):
        return self.bins.shape[0]

    @property
    def freq_count(self):
        return self.bins.shape[1]

    @property
    def frame_count(self):
        return self.bins.shape[2]

    def channel(self, index) -> "Spectrogram":
        return Spectrogram(
            self.bins[index : index + 1], self.sample_rate, self.window_size, self.hop_size
        )

    def select_channels(self, indices) -> "Spectrogram":
        return Spectrogram(
            self.bins[list(indices)], self.sample_rate, self.window_size, self.hop_size
        )

    def replace_bins(self, bins) -> "Spectrogram":
        return Spectrogram(bins, self.sample_rate, self.window_size, self.hop_size)


@dataclass(frozen=True)
class FeatureStats:
    """Per-frequency mean/std of dB magnitudes, reusable across utterances."""

    mean: np.ndarray  # (F,)
    std: np.ndarray  # (F,)


@dataclass(frozen=True)
class FeatureMatrix:
    """Standardized log-magnitude features (frequency x frame)."""

    values: np.ndarray  # (F, T)
    stats: FeatureStats = field(repr=False, default=None)


def analyze(clip: AudioClip, cfg: StftConfig) -> Spectrogram:
    """Windowed FFT analysis of every channel.

    Frames start at sample 0 and advance by hop_size; a trailing partial
    frame is dropped. Linear in the input.
    """
    n = clip.num_samples
    if n == 0:
        raise ValueError("cannot analyze an empty clip")
    if n < cfg.window_size:
        raise ValueError(f"clip of {n} samples shorter than window {cfg.window_size}")
    window = cfg.window()
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, cfg.window_size, axis=1)
    frames = frames[:, :: cfg.hop_size]  # (C, T, W)
    bins = np.fft.rfft(frames * window, axis=2)  # (C, T, F)
    return Spectrogram(
        bins.transpose(0, 2, 1), clip.sample_rate, cfg.window_size, cfg.hop_size
    )


def synthesize(spec: Spectrogram, cfg: StftConfig) -> AudioClip:
    """Overlap-add synthesis, inverse of :func:`analyze` for interior samples.

    The output is normalized by the accumulated squared-window envelope, so
    analyze->synthesize reproduces every covered sample of the input exactly
    (up to rounding); modified spectrograms are only reliable away from the
    first/last window.
    """
    if spec.window_size != cfg.window_size or spec.hop_size != cfg.hop_size:
        raise ValueError(
            "spectrogram framing "
            f"(window={spec.window_size}, hop={spec.hop_size}) does not match "
            f"config (window={cfg.window_size}, hop={cfg.hop_size})"
        )
    window = cfg.window()
    c, f, t = spec.bins.shape
    out_len = (t - 1) * cfg.hop_size + cfg.window_size
    frames = np.fft.irfft(spec.bins.transpose(0, 2, 1), n=cfg.window_size, axis=2)
    frames *= window
    out = np.zeros((c, out_len))
    envelope = np.zeros(out_len)
    for m in range(t):
        start = m * cfg.hop_size
        out[:, start : start + cfg.window_size] += frames[:, m]
        envelope[start : start + cfg.window_size] += window**2
    covered = envelope > 1e-11
    out[:, covered] /= envelope[covered]
    out[:, ~covered] = 0.0
    return AudioClip(out, spec.sample_rate)


def magnitude_db(spec: Spectrogram, channel) -> np.ndarray:
    """Magnitude of one channel in dB, floored relative to the utterance peak."""
    mags = np.abs(spec.bins[channel])
    peak = mags.max()
    eps = DB_EPS_RELATIVE * peak if peak > 0 else np.finfo(np.float64).tiny
    return 20.0 * np.log10(mags + eps)


def feature_stats(db_matrices) -> FeatureStats:
    """Per-frequency mean/std over a corpus of dB matrices (each (F, T))."""
    stacked = np.concatenate([np.asarray(m) for m in db_matrices], axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)
    std = np.where(std < 1e-9 * np.maximum(1.0, np.abs(mean)), 1.0, std)
    return FeatureStats(mean=mean, std=std)


def to_features(spec: Spectrogram, channel, stats: FeatureStats = None) -> FeatureMatrix:
    """dB magnitudes of one channel, standardized per frequency bin.

    With stats=None the mean/std are computed from this utterance (zero
    variance rows are guarded to std=1); otherwise the supplied statistics
    are applied unchanged.
    """
    if not 0 <= channel < spec.channel_count:
        raise IndexError(f"channel {channel} out of range for {spec.channel_count} channels")
    db = magnitude_db(spec, channel)
    if stats is None:
        stats = feature_stats([db])
    values = (db - stats.mean[:, None]) / stats.std[:, None]
    return FeatureMatrix(values=values, stats=stats)
