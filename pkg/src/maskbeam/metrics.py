"""Separation-quality metrics and evaluation reports.

si_sdr and segmental_snr work on single-channel time signals of equal
length; mask_scores compares a predicted soft mask to a target mask.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip

SI_SDR_CAP_DB = 60.0
SEG_SNR_RANGE_DB = (-10.0, 35.0)


def _as_signal(x):
    if isinstance(x, AudioClip):
        if x.channel_count != 1:
            raise ValueError("metric inputs must be single-channel")
        return x.samples[0]
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("metric inputs must be 1-D signals")
    return x


def si_sdr(estimate, reference, cap_db=SI_SDR_CAP_DB):
    """Scale-invariant signal-to-distortion ratio in dB, capped at cap_db.

    The estimate is projected onto the reference; the score is the power
    ratio of that projection to the residual.
    """
    est = _as_signal(estimate)
    ref = _as_signal(reference)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: estimate {est.shape}, reference {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy == 0:
        raise ValueError("reference signal is identically zero")
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    residual = est - target
    num = float(target @ target)
    den = float(residual @ residual)
    if den == 0:
        return cap_db
    tiny = np.finfo(np.float64).tiny
    return min(10.0 * np.log10((num + tiny) / den), cap_db)


def segmental_snr(estimate, reference, frame_len=256, clamp_db=SEG_SNR_RANGE_DB):
    """Frame-averaged SNR in dB, each frame clamped to clamp_db."""
    est = _as_signal(estimate)
    ref = _as_signal(reference)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: estimate {est.shape}, reference {ref.shape}")
    if frame_len <= 0:
        raise ValueError("frame_len must be positive")
    n_frames = ref.shape[0] // frame_len
    if n_frames == 0:
        raise ValueError(f"signal shorter than one frame of {frame_len}")
    used = n_frames * frame_len
    ref_frames = ref[:used].reshape(n_frames, frame_len)
    err_frames = (est - ref)[:used].reshape(n_frames, frame_len)
    tiny = np.finfo(np.float64).tiny
    with np.errstate(divide="ignore", over="ignore"):
        ratios = 10.0 * np.log10(
            (np.sum(ref_frames**2, axis=1) + tiny) / (np.sum(err_frames**2, axis=1) + tiny)
        )
    return float(np.mean(np.clip(ratios, clamp_db[0], clamp_db[1])))


def mask_scores(pred, target, threshold=0.5):
    """(binary cross-entropy, hit rate) of a predicted mask against a target."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, target {target.shape}")
    clipped = np.clip(pred, 1e-12, 1.0 - 1e-12)
    bce = float(-np.mean(target * np.log(clipped) + (1.0 - target) * np.log(1.0 - clipped)))
    hit_rate = float(np.mean((pred > threshold) == (target > threshold)))
    return bce, hit_rate


@dataclass
class UtteranceScore:
    stem: str
    group: str
    si_sdr_db: float
    seg_snr_db: float
    mask_bce: float = None
    mask_hit_rate: float = None


@dataclass
class EvalReport:
    """Per-utterance scores plus overall and per-group aggregates."""

    rows: list = field(default_factory=list)

    def add(self, row: UtteranceScore):
        self.rows.append(row)

    def _metric_names(self):
        names = ["si_sdr_db", "seg_snr_db"]
        if any(r.mask_bce is not None for r in self.rows):
            names += ["mask_bce", "mask_hit_rate"]
        return names

    def aggregate(self, group=None):
        """Mean of each metric, optionally restricted to one group tag."""
        rows = [r for r in self.rows if group is None or r.group == group]
        out = {}
        for name in self._metric_names():
            values = [getattr(r, name) for r in rows if getattr(r, name) is not None]
            out[name] = float(np.mean(values)) if values else float("nan")
        return out

    def groups(self):
        seen = []
        for r in self.rows:
            if r.group not in seen:
                seen.append(r.group)
        return seen

    def to_table(self):
        """Aligned-column text table with per-group and overall mean rows."""
        names = self._metric_names()
        header = ["stem", "group"] + names
        lines = [header]
        for r in sorted(self.rows, key=lambda r: r.stem):
            lines.append(
                [r.stem, r.group]
                + [f"{getattr(r, n):.3f}" if getattr(r, n) is not None else "-" for n in names]
            )
        for g in self.groups():
            agg = self.aggregate(g)
            lines.append([f"mean[{g}]", g] + [f"{agg[n]:.3f}" for n in names])
        agg = self.aggregate()
        lines.append(["mean", "all"] + [f"{agg[n]:.3f}" for n in names])
        widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
        out = io.StringIO()
        for row in lines:
            out.write("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() + "\n")
        return out.getvalue()

    def to_csv(self):
        names = self._metric_names()
        lines = ["stem,group," + ",".join(names)]
        for r in sorted(self.rows, key=lambda r: r.stem):
            cells = [f"{getattr(r, n):.6f}" if getattr(r, n) is not None else "" for n in names]
            lines.append(f"{r.stem},{r.group}," + ",".join(cells))
        for g in self.groups():
            agg = self.aggregate(g)
            lines.append(f"mean[{g}],{g}," + ",".join(f"{agg[n]:.6f}" for n in names))
        agg = self.aggregate()
        lines.append("mean,all," + ",".join(f"{agg[n]:.6f}" for n in names))
        return "\n".join(lines) + "\n"
