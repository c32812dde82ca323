"""Multi-channel audio container and RIFF WAV input/output.

Shape convention: sample buffers are float64 arrays of shape (channels, samples).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile


@dataclass(frozen=True)
class AudioClip:
    """A block of audio, one row per channel, at a fixed sample rate."""

    samples: np.ndarray  # (channels, samples), float64
    sample_rate: int

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if samples.ndim != 2:
            raise ValueError(f"expected (channels, samples) buffer, got ndim={samples.ndim}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def channel_count(self):
        return self.samples.shape[0]

    @property
    def num_samples(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.num_samples / self.sample_rate

    def channel(self, index) -> "AudioClip":
        """Single-channel view of one channel."""
        if not 0 <= index < self.channel_count:
            raise IndexError(f"channel {index} out of range for {self.channel_count} channels")
        return AudioClip(self.samples[index : index + 1], self.sample_rate)

    def select_channels(self, indices) -> "AudioClip":
        return AudioClip(self.samples[list(indices)], self.sample_rate)


def read_wav(path) -> AudioClip:
    """Read a RIFF WAV file (16-bit int or 32/64-bit float) into an AudioClip.

    Integer samples are scaled to [-1, 1); the file's sample rate is kept as-is.
    """
    rate, data = wavfile.read(str(path))
    if data.ndim == 1:
        data = data[:, None]
    data = data.T  # -> (channels, samples)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    return AudioClip(data, int(rate))


def write_wav(path, clip: AudioClip, sample_format="float32"):
    """Write an AudioClip as RIFF WAV, float32 by default or 16-bit PCM."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = clip.samples.T  # (samples, channels) for the WAV layout
    if sample_format == "float32":
        wavfile.write(str(path), clip.sample_rate, data.astype(np.float32))
    elif sample_format == "int16":
        scaled = np.clip(np.round(data * 32767.0), -32768, 32767)
        wavfile.write(str(path), clip.sample_rate, scaled.astype(np.int16))
    else:
        raise ValueError(f"unsupported sample_format {sample_format!r}")
