"""Synthetic multi-channel mixtures with exact ground truth.

Sources are steered anechoically (per-channel fractional delay + gain), so
steering vectors and per-channel images are known in closed form and can
serve as oracles. Fractional delays are applied in the frequency domain on
zero-padded buffers to avoid circular wrap-around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from .audio import AudioClip


@dataclass(frozen=True)
class SourceSpec:
    """One dry source plus its anechoic propagation to every microphone."""

    dry: AudioClip  # single channel
    delays: np.ndarray  # (M,) fractional samples, >= 0
    gains: np.ndarray  # (M,) linear scale, > 0

    def __post_init__(self):
        delays = np.asarray(self.delays, dtype=np.float64)
        gains = np.asarray(self.gains, dtype=np.float64)
        if self.dry.channel_count != 1:
            raise ValueError("dry signal must be single-channel")
        if delays.shape != gains.shape or delays.ndim != 1:
            raise ValueError("delays and gains must be 1-D and the same length")
        if np.any(gains <= 0):
            raise ValueError("gains must be positive")
        if np.any(delays < 0):
            raise ValueError("delays must be nonnegative")
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "gains", gains)

    @property
    def channel_count(self):
        return self.delays.shape[0]


@dataclass(frozen=True)
class MixtureTruth:
    """A mixture together with the per-source and noise images that sum to it."""

    mixture: AudioClip
    source_images: tuple  # of AudioClip, each (M, N)
    noise_image: AudioClip
    snr_db: float


def fractional_delay(signal, delay):
    """Delay a 1-D signal by a (possibly fractional) number of samples.

    Implemented as a linear-phase filter on a zero-padded FFT, i.e. band-
    limited interpolation; an integer delay reproduces an exact shift.
    """
    signal = np.asarray(signal, dtype=np.float64)
    n = signal.shape[0]
    if delay < 0:
        raise ValueError("delay must be nonnegative")
    if delay >= n:
        raise ValueError(f"delay {delay} exceeds signal length {n}")
    n_fft = next_fast_len(n + int(math.ceil(delay)) + 1)
    spectrum = np.fft.fft(signal, n=n_fft)
    omega = 2.0 * np.pi * np.fft.fftfreq(n_fft)
    shifted = np.fft.ifft(spectrum * np.exp(-1j * omega * delay)).real
    return shifted[:n]


def delay_source(spec: SourceSpec) -> AudioClip:
    """Spatial image of a source: channel c = gain_c * dry delayed by delays[c]."""
    if spec.dry.num_samples == 0:
        raise ValueError("dry signal is empty")
    dry = spec.dry.samples[0]
    image = np.stack(
        [g * fractional_delay(dry, d) for d, g in zip(spec.delays, spec.gains)]
    )
    return AudioClip(image, spec.dry.sample_rate)


def mix(sources, noise: AudioClip, snr_db) -> MixtureTruth:
    """Sum source images plus noise scaled to the requested channel-1 SNR.

    The SNR is defined on the first channel as
    10*log10(power of summed source images / power of scaled noise).
    snr_db=inf drops the noise entirely.
    """
    if not sources:
        raise ValueError("need at least one source")
    images = [delay_source(s) for s in sources]
    m = images[0].channel_count
    n = images[0].num_samples
    rate = images[0].sample_rate
    for im in images[1:]:
        if im.samples.shape != (m, n):
            raise ValueError("source images have incompatible shapes")
    if noise.samples.shape != (m, n):
        raise ValueError(f"noise shape {noise.samples.shape} does not match images ({m}, {n})")

    source_sum = np.sum([im.samples for im in images], axis=0)
    if math.isinf(snr_db) and snr_db > 0:
        gain = 0.0
    else:
        p_signal = np.mean(source_sum[0] ** 2)
        p_noise = np.mean(noise.samples[0] ** 2)
        if p_noise == 0:
            raise ValueError("noise has zero power on channel 1 but a finite SNR was requested")
        gain = math.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    noise_image = AudioClip(gain * noise.samples, rate)
    mixture = AudioClip(source_sum + noise_image.samples, rate)
    return MixtureTruth(
        mixture=mixture,
        source_images=tuple(images),
        noise_image=noise_image,
        snr_db=float(snr_db),
    )


# ---------------------------------------------------------------------------
# Test-signal generators. Deterministic given the RNG; the speech-like
# generator produces a harmonic complex with pitch drift, slow amplitude
# modulation and a spectral rolloff so that masks have visible structure.
# ---------------------------------------------------------------------------


def white_noise(rng, num_samples, sample_rate, channels=1):
    return AudioClip(rng.standard_normal((channels, num_samples)), sample_rate)


def speech_like(rng, num_samples, sample_rate, f0=None, envelope_floor=0.05):
    """Single-channel quasi-speech signal: drifting harmonics, bursty envelope.

    The squared-sine amplitude modulation leaves near-silent gaps between
    bursts, mimicking the pauses that make masks informative on real speech.
    """
    if f0 is None:
        f0 = rng.uniform(90.0, 250.0)
    t = np.arange(num_samples) / sample_rate
    drift = 1.0 + 0.08 * np.sin(2.0 * np.pi * rng.uniform(0.3, 1.2) * t + rng.uniform(0, 2 * np.pi))
    phase0 = 2.0 * np.pi * np.cumsum(f0 * drift) / sample_rate
    signal = np.zeros(num_samples)
    n_harmonics = max(3, int((0.4 * sample_rate / 2) / f0))
    for k in range(1, n_harmonics + 1):
        signal += (1.0 / k) * np.sin(k * phase0 + rng.uniform(0, 2 * np.pi))
    modulation = 0.5 * (1 + np.sin(2.0 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi)))
    signal *= envelope_floor + (1.0 - envelope_floor) * modulation**2
    signal /= np.max(np.abs(signal)) + 1e-12
    return AudioClip(signal[None, :], sample_rate)


def chirp_signal(num_samples, sample_rate, f_start=100.0, f_end=None):
    """Linear chirp sweeping the band, useful for round-trip checks."""
    if f_end is None:
        f_end = 0.45 * sample_rate
    t = np.arange(num_samples) / sample_rate
    duration = num_samples / sample_rate
    phase = 2.0 * np.pi * (f_start * t + 0.5 * (f_end - f_start) / duration * t**2)
    return AudioClip(np.sin(phase)[None, :], sample_rate)
