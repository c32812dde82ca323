"""EM clustering of interchannel phase differences into per-source masks.

Each source k is modeled, per microphone pair, by a time delay of arrival
(TDOA) tau_k; the observed phase difference at bin (omega, t) is fit by a
Gaussian on the wrapped residual wrap(ipd + omega * tau_k) with a per-
frequency variance, mixed with prior weights. The E-step yields posterior
masks, the M-step refits priors, TDOAs (grid search + guarded quadratic
refinement) and variances. All reductions run in a fixed order, so results
are deterministic.

Shapes: spectrogram bins (C, F, T); posteriors (K, F, T); TDOA (K, P) for
P microphone pairs; variance (K, F).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stft import Spectrogram

VARIANCE_FLOOR = 1e-3
DEFAULT_TDOA_STEP = 0.5


@dataclass(frozen=True)
class ClusterParams:
    """Spatial parameters of each source."""

    pairs: tuple  # of (a, b) channel index pairs
    tdoa: np.ndarray  # (K, P) fractional samples
    variance: np.ndarray  # (K, F) phase-residual variance
    prior: np.ndarray  # (K,) mixing weights, sum to 1

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=np.float64)
        if not np.isclose(prior.sum(), 1.0, atol=1e-8):
            raise ValueError(f"priors must sum to 1, got {prior.sum()}")
        if np.any(np.asarray(self.variance) <= 0):
            raise ValueError("variances must be positive")

    @property
    def n_sources(self):
        return self.tdoa.shape[0]


@dataclass(frozen=True)
class PosteriorMasks:
    """Per-source posterior masks; sums to 1 across sources at every bin."""

    masks: np.ndarray  # (K, F, T) in [0, 1]

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=np.float64)
        if np.any(masks < -1e-12) or np.any(masks > 1 + 1e-12):
            raise ValueError("posterior masks must lie in [0, 1]")
        object.__setattr__(self, "masks", masks)

    @property
    def n_sources(self):
        return self.masks.shape[0]


@dataclass(frozen=True)
class EmTrace:
    log_likelihood: tuple  # one value per E-step, including the final emission
    iterations: int


@dataclass(frozen=True)
class EmResult:
    posteriors: PosteriorMasks
    params: ClusterParams
    trace: EmTrace
    target_index: int

    @property
    def target_mask(self):
        return self.posteriors.masks[self.target_index]


def wrap_phase(x):
    """Wrap angles to [-pi, pi)."""
    return np.mod(x + np.pi, 2.0 * np.pi) - np.pi


def observed_ipd(spec: Spectrogram, pair):
    """Wrapped phase of the cross-spectrum between two channels, (F, T)."""
    a, b = pair
    if a == b:
        raise ValueError("pair must name two distinct channels")
    return np.angle(spec.bins[a] * np.conj(spec.bins[b]))


def default_tdoa_grid(window_size, step=DEFAULT_TDOA_STEP):
    """Symmetric search grid of +/- window_size/8 samples."""
    span = window_size / 8.0
    return np.arange(-span, span + step / 2, step)


def _omega(spec):
    window_size = 2 * (spec.freq_count - 1)
    return 2.0 * np.pi * np.arange(spec.freq_count) / window_size


def angular_spectrum(ipd, omega, grid):
    """Phase-transform cross-correlation evaluated on a delay grid.

    Returns one score per grid point: sum over bins of cos(ipd + omega*tau),
    which peaks where the phase ramp -omega*tau explains the observations.
    """
    scores = np.empty(len(grid))
    for i, tau in enumerate(grid):
        scores[i] = np.cos(ipd + omega[:, None] * tau).sum()
    return scores


def _grid_peaks(scores, grid):
    """Local maxima of the angular spectrum, strongest first."""
    interior = (scores[1:-1] > scores[:-2]) & (scores[1:-1] >= scores[2:])
    idx = np.flatnonzero(interior) + 1
    order = np.argsort(scores[idx])[::-1]
    return [grid[i] for i in idx[order]]


def init_params(spec: Spectrogram, n_sources, tdoa_grid=None, pairs=None) -> ClusterParams:
    """Place sources on the strongest cross-correlation peaks.

    Peaks are picked per pair independently and matched across pairs by
    strength rank. If a pair yields fewer peaks than sources, the remaining
    sources fall back to evenly spaced grid points.
    """
    if n_sources < 1:
        raise ValueError("need at least one source")
    if pairs is None:
        pairs = ((0, 1),)
    pairs = tuple(tuple(p) for p in pairs)
    if tdoa_grid is None:
        tdoa_grid = default_tdoa_grid(2 * (spec.freq_count - 1))
    tdoa_grid = np.asarray(tdoa_grid, dtype=np.float64)
    if tdoa_grid.size == 0:
        raise ValueError("tdoa grid is empty")

    omega = _omega(spec)
    tdoa = np.zeros((n_sources, len(pairs)))
    fallback = np.linspace(tdoa_grid[0], tdoa_grid[-1], n_sources + 2)[1:-1]
    for p, pair in enumerate(pairs):
        peaks = _grid_peaks(angular_spectrum(observed_ipd(spec, pair), omega, tdoa_grid), tdoa_grid)
        for k in range(n_sources):
            tdoa[k, p] = peaks[k] if k < len(peaks) else fallback[k]
    return ClusterParams(
        pairs=pairs,
        tdoa=tdoa,
        variance=np.ones((n_sources, spec.freq_count)),
        prior=np.full(n_sources, 1.0 / n_sources),
    )


def _log_component_scores(spec, params):
    """log prior_k + sum over pairs of log N(wrapped residual; 0, var_k), (K, F, T)."""
    omega = _omega(spec)
    k_count = params.n_sources
    f, t = spec.freq_count, spec.frame_count
    scores = np.empty((k_count, f, t))
    log_prior = np.log(np.maximum(params.prior, 1e-300))
    ipds = [observed_ipd(spec, pair) for pair in params.pairs]
    for k in range(k_count):
        var = params.variance[k][:, None]  # (F, 1)
        acc = np.zeros((f, t))
        for p, ipd in enumerate(ipds):
            residual = wrap_phase(ipd + omega[:, None] * params.tdoa[k, p])
            acc += -0.5 * np.log(2.0 * np.pi * var) - residual**2 / (2.0 * var)
        scores[k] = log_prior[k] + acc
    return scores


def e_step(spec: Spectrogram, params: ClusterParams):
    """Posterior masks and total log-likelihood under the current parameters."""
    scores = _log_component_scores(spec, params)
    top = scores.max(axis=0, keepdims=True)
    shifted = np.exp(scores - top)
    denom = shifted.sum(axis=0, keepdims=True)
    masks = shifted / denom
    log_likelihood = float((top[0] + np.log(denom[0])).sum())
    return PosteriorMasks(masks), log_likelihood


def _fit_tdoa(ipd, omega, weights, tau_old, grid):
    """Minimize the weighted squared wrapped residual over tau.

    Searches the grid, refines the best grid point by a parabola through its
    neighbors, and keeps whichever of {grid best, refined, previous tau} has
    the lowest cost — the update therefore never loses ground.
    """

    def cost(tau):
        return float((weights * wrap_phase(ipd + omega[:, None] * tau) ** 2).sum())

    costs = np.array([cost(tau) for tau in grid])
    best = int(np.argmin(costs))
    candidates = [(costs[best], grid[best]), (cost(tau_old), tau_old)]
    if 0 < best < len(grid) - 1:
        c_l, c_m, c_r = costs[best - 1], costs[best], costs[best + 1]
        denom = c_l - 2.0 * c_m + c_r
        if denom > 0:
            offset = 0.5 * (c_l - c_r) / denom
            step = grid[1] - grid[0]
            refined = grid[best] + offset * step
            candidates.append((cost(refined), refined))
    return min(candidates, key=lambda c: c[0])[1]


def m_step(spec: Spectrogram, posteriors: PosteriorMasks, params: ClusterParams,
           tdoa_grid=None) -> ClusterParams:
    """Refit priors, TDOAs and variances from the posterior masks.

    A source left with (numerically) zero posterior mass is re-seeded at the
    strongest cross-correlation peak not claimed by another source.
    """
    if tdoa_grid is None:
        tdoa_grid = default_tdoa_grid(2 * (spec.freq_count - 1))
    tdoa_grid = np.asarray(tdoa_grid, dtype=np.float64)
    omega = _omega(spec)
    masks = posteriors.masks
    k_count, f, t = masks.shape
    n_pairs = len(params.pairs)

    mass = masks.sum(axis=(1, 2))  # (K,)
    total = mass.sum()
    prior = mass / total

    ipds = [observed_ipd(spec, pair) for pair in params.pairs]
    tdoa = params.tdoa.copy()
    variance = params.variance.copy()

    dead = prior < 1e-10
    for k in range(k_count):
        if dead[k]:
            continue
        weights = masks[k] / params.variance[k][:, None]
        for p in range(n_pairs):
            tdoa[k, p] = _fit_tdoa(ipds[p], omega, weights, params.tdoa[k, p], tdoa_grid)
        residual_sq = np.zeros((f, t))
        for p in range(n_pairs):
            residual_sq += wrap_phase(ipds[p] + omega[:, None] * tdoa[k, p]) ** 2
        num = (masks[k] * residual_sq).sum(axis=1)
        den = n_pairs * masks[k].sum(axis=1)
        fitted = np.where(den > 1e-12, num / np.maximum(den, 1e-12), params.variance[k])
        variance[k] = np.maximum(fitted, VARIANCE_FLOOR)

    if np.any(dead):
        # Re-seed the spatial parameters so a dead source lands somewhere
        # sensible; its prior stays the (zero) posterior mass fraction.
        step = tdoa_grid[1] - tdoa_grid[0] if len(tdoa_grid) > 1 else 1.0
        claimed = {round(tdoa[k, 0] / step) for k in range(k_count) if not dead[k]}
        peaks = _grid_peaks(angular_spectrum(ipds[0], omega, tdoa_grid), tdoa_grid)
        for k in np.flatnonzero(dead):
            fresh = next((p for p in peaks if round(p / step) not in claimed), tdoa_grid[0])
            claimed.add(round(fresh / step))
            tdoa[k, :] = fresh
            variance[k, :] = 1.0

    return ClusterParams(pairs=params.pairs, tdoa=tdoa, variance=variance, prior=prior)


def target_source_index(params: ClusterParams):
    """Source whose TDOA is nearest zero (the array faces the talker)."""
    return int(np.argmin(np.abs(params.tdoa).mean(axis=1)))


def run_em(spec: Spectrogram, n_sources=2, n_iters=20, tdoa_grid=None, pairs=None,
           target_override=None) -> EmResult:
    """Alternate E and M steps, then emit masks under the final parameters.

    The trace records the log-likelihood of every E-step (n_iters + 1
    values); EM guarantees it is non-decreasing up to rounding.
    """
    if n_iters < 1:
        raise ValueError("need at least one iteration")
    if tdoa_grid is None:
        tdoa_grid = default_tdoa_grid(2 * (spec.freq_count - 1))
    params = init_params(spec, n_sources, tdoa_grid, pairs)
    trace = []
    posteriors = None
    for _ in range(n_iters):
        posteriors, ll = e_step(spec, params)
        trace.append(ll)
        params = m_step(spec, posteriors, params, tdoa_grid)
    posteriors, ll = e_step(spec, params)
    trace.append(ll)
    target = target_source_index(params) if target_override is None else int(target_override)
    return EmResult(
        posteriors=posteriors,
        params=params,
        trace=EmTrace(log_likelihood=tuple(trace), iterations=n_iters),
        target_index=target,
    )
