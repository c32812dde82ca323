"""Conservative fusion of per-channel cleaned masks with the spatial mask.

The speech mask takes the pointwise minimum of everything available (only
bins that every estimator calls speech), the noise mask the pointwise
maximum (so its complement only contains bins that everything calls noise),
and the post-filter mask the arithmetic mean. The spatial mask participates
only when present in the MaskSet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MaskSet:
    """Per-channel cleaned masks plus an optional spatial mask, all (F, T)."""

    cleaned: tuple  # of (F, T) arrays
    spatial: np.ndarray = None

    def __post_init__(self):
        cleaned = tuple(np.asarray(m, dtype=np.float64) for m in self.cleaned)
        object.__setattr__(self, "cleaned", cleaned)
        if self.spatial is not None:
            object.__setattr__(self, "spatial", np.asarray(self.spatial, dtype=np.float64))
        masks = self.all_masks()
        if not masks:
            raise ValueError("mask set is empty")
        shape = masks[0].shape
        for m in masks:
            if m.shape != shape:
                raise ValueError("all masks must share one shape")
            if np.any(m < -1e-12) or np.any(m > 1 + 1e-12):
                raise ValueError("mask values must lie in [0, 1]")

    def all_masks(self):
        masks = list(self.cleaned)
        if self.spatial is not None:
            masks.append(self.spatial)
        return masks


def fuse_speech(mask_set: MaskSet):
    """Pointwise minimum over all present masks."""
    return np.minimum.reduce(mask_set.all_masks())


def fuse_noise(mask_set: MaskSet):
    """Pointwise maximum over all present masks."""
    return np.maximum.reduce(mask_set.all_masks())


def fuse_post(mask_set: MaskSet):
    """Arithmetic mean over all present masks."""
    masks = mask_set.all_masks()
    return np.add.reduce(masks) / len(masks)
