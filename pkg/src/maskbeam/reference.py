"""Clean-reference construction from a close microphone plus the array.

The close microphone only steers the processing: its per-frequency energy
percentiles gate the covariance adaptation (speech mask) and the post-
filter. The output signal itself is a masked linear combination of array
channels, so close-mic artifacts (pops, clicks) cannot leak into it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .beamform import apply_beamformer, estimate_covariance, mvdr_weights
from .stft import Spectrogram, StftConfig, synthesize

ADAPT_PERCENTILE = 85.0
POST_PERCENTILE = 75.0
MAX_SUPPRESSION_DB = 15.0


@dataclass(frozen=True)
class VadMask:
    """Binary frequency-dependent voice-activity mask."""

    values: np.ndarray  # (F, T) of {0.0, 1.0}
    percentile: float


def nearest_rank_threshold(values, percentile):
    """Nearest-rank percentile along the last axis."""
    ordered = np.sort(values, axis=-1)
    n = values.shape[-1]
    rank = max(1, math.ceil(percentile / 100.0 * n))
    return ordered[..., rank - 1]


def percentile_vad(close_spec: Spectrogram, percentile) -> VadMask:
    """Mark bins whose energy strictly exceeds the per-band percentile."""
    if close_spec.channel_count != 1:
        raise ValueError("close-microphone spectrogram must be single-channel")
    if not 0 < percentile < 100:
        raise ValueError(f"percentile must be in (0, 100), got {percentile}")
    if close_spec.frame_count < 2:
        raise ValueError("need at least two frames to define a percentile")
    energy = np.abs(close_spec.bins[0]) ** 2
    threshold = nearest_rank_threshold(energy, percentile)
    return VadMask(values=(energy > threshold[:, None]).astype(np.float64),
                   percentile=float(percentile))


def _smooth_frames(mask, width):
    """Moving average along the frame axis (edges use a shorter window)."""
    if width <= 1:
        return mask
    kernel = np.ones(width) / width
    smoothed = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 1, mask)
    return smoothed


def build_reference(array_spec: Spectrogram, close_spec: Spectrogram, cfg: StftConfig,
                    ref_channel=0, adapt_percentile=ADAPT_PERCENTILE,
                    post_percentile=POST_PERCENTILE,
                    max_suppression_db=MAX_SUPPRESSION_DB, smooth_width=3):
    """Percentile-gated MVDR reference from the array, steered by the close mic.

    Speech covariance adapts on bins above the adapt percentile of the close
    mic's band energy, noise covariance on their complement. The post-filter
    mask comes from the lower percentile, smoothed over frames, with its
    gain floored at 10**(-max_suppression_db / 20).

    Returns (reference AudioClip, reference Spectrogram).
    """
    if array_spec.frame_count != close_spec.frame_count \
            or array_spec.freq_count != close_spec.freq_count:
        raise ValueError("array and close-mic spectrograms must be time/frequency aligned")
    adapt = percentile_vad(close_spec, adapt_percentile)
    cov_speech = estimate_covariance(array_spec, adapt.values, kind="speech")
    cov_noise = estimate_covariance(array_spec, adapt.values, kind="noise")
    bf = mvdr_weights(cov_noise, cov_speech, ref_channel)

    post = percentile_vad(close_spec, post_percentile)
    floor = 10.0 ** (-max_suppression_db / 20.0)
    gain = np.maximum(_smooth_frames(post.values, smooth_width), floor)

    ref_spec = apply_beamformer(array_spec, bf, gain)
    return synthesize(ref_spec, cfg), ref_spec
