"""Dense mask files: a short ASCII header followed by raw float64 data."""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = b"MASKBEAM MASK 1\n"


def save_mask(path, mask, window_size, hop_size):
    """Write an (F, T) mask with its framing parameters."""
    mask = np.ascontiguousarray(mask, dtype="<f8")
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D (frequency x frame)")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (
        f"freqs {mask.shape[0]}\nframes {mask.shape[1]}\n"
        f"window {window_size}\nhop {hop_size}\nend\n"
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("ascii"))
        fh.write(mask.tobytes())


def load_mask(path):
    """Read a mask file; returns (mask, header dict with window/hop)."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a mask file")
        header = {}
        while True:
            line = fh.readline().decode("ascii").strip()
            if line == "end":
                break
            if not line:
                raise ValueError(f"truncated mask header in {path}")
            key, value = line.split()
            header[key] = int(value)
        count = header["freqs"] * header["frames"]
        data = np.frombuffer(fh.read(count * 8), dtype="<f8")
        if data.size != count:
            raise ValueError(f"mask payload truncated in {path}")
    mask = data.reshape(header["freqs"], header["frames"])
    return mask, header
