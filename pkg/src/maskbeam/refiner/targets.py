"""Training targets and input transforms for the mask refiner."""

from __future__ import annotations

import numpy as np

LOGIT_EPS = 1e-6
MAG_FLOOR = 1e-12


def ideal_amplitude_mask(clean_bins, noisy_bins):
    """|clean| / |noisy| per bin, clipped to [0, 1].

    Bins where destructive interference pushes the ratio above 1 are clipped
    so the result is a valid cross-entropy target.
    """
    clean_bins = np.asarray(clean_bins)
    noisy_bins = np.asarray(noisy_bins)
    if clean_bins.shape != noisy_bins.shape:
        raise ValueError(
            f"shape mismatch: clean {clean_bins.shape}, noisy {noisy_bins.shape}"
        )
    ratio = np.abs(clean_bins) / np.maximum(np.abs(noisy_bins), MAG_FLOOR)
    return np.clip(ratio, 0.0, 1.0)


def logit_transform(mask, eps=LOGIT_EPS):
    """log(m / (1 - m)) with m clamped to [eps, 1 - eps]."""
    mask = np.asarray(mask, dtype=np.float64)
    clamped = np.clip(mask, eps, 1.0 - eps)
    return np.log(clamped / (1.0 - clamped))
