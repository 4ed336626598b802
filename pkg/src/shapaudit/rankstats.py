"""Weighted Kendall's tau between score vectors and cross-run rank
distribution summaries.

Tau uses additive hyperbolic weights w(i,j) = 1/(1+r_i) + 1/(1+r_j) with
r the 0-based ranks of the reference ranking (descending scores, ties
broken by the other vector's descending scores, then ascending index),
tau-b-style tie normalization, and reports the mean of the two
directional values so the statistic is symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_BLOCK = 256


@dataclass(frozen=True)
class TauResult:
    tau_w: float
    n: int
    forward: float
    reverse: float

    def __post_init__(self):
        if abs(self.tau_w) > 1.0 + 1e-12:
            raise ValueError(f"tau_w out of [-1, 1]: {self.tau_w}")


def _reference_ranks(primary: np.ndarray, secondary: np.ndarray) -> np.ndarray:
    """0-based ranks by descending primary score; ties broken by descending
    secondary score, then ascending index."""
    n = primary.size
    order = np.lexsort((np.arange(n), -secondary, -primary))
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.arange(n, dtype=np.float64)
    return ranks


def _directional_tau(a: np.ndarray, b: np.ndarray) -> float:
    """Tau with a as the reference ranking.  Row-blocked O(n^2) pair sweep;
    summing ordered pairs double-counts numerator and denominators alike, so
    the ratio is unaffected."""
    inv = 1.0 / (1.0 + _reference_ranks(a, b))
    num = 0.0
    den_a = 0.0
    den_b = 0.0
    n = a.size
    for start in range(0, n, _BLOCK):
        rows = slice(start, min(start + _BLOCK, n))
        da = np.sign(a[rows, None] - a[None, :])
        db = np.sign(b[rows, None] - b[None, :])
        w = inv[rows, None] + inv[None, :]
        num += float((w * da * db).sum())
        den_a += float((w * (da != 0.0)).sum())
        den_b += float((w * (db != 0.0)).sum())
    if den_a == 0.0 or den_b == 0.0:
        raise ValueError("weighted tau is undefined when a score vector is entirely tied")
    return num / math.sqrt(den_a * den_b)


def weighted_kendall_tau(scores_a, scores_b) -> TauResult:
    """Symmetric weighted Kendall's tau between two score vectors over the
    same feature universe.  1.0 for identical rankings, -1.0 for an exact
    reversal without ties."""
    a = np.asarray(scores_a, dtype=np.float64).ravel()
    b = np.asarray(scores_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least 2 features")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("scores must be finite")
    forward = _directional_tau(a, b)
    reverse = _directional_tau(b, a)
    tau = (forward + reverse) / 2.0
    return TauResult(tau_w=tau, n=a.size, forward=forward, reverse=reverse)


def nearest_rank_percentile(sorted_values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile (no interpolation) of an ascending array."""
    m = sorted_values.shape[0]
    if m == 0:
        raise ValueError("empty sample")
    k = max(1, math.ceil(p / 100.0 * m))
    return float(sorted_values[k - 1])


@dataclass
class RankDistribution:
    """Per-feature order statistics of ranks across runs (nearest-rank
    quartiles)."""

    universe: str
    labels: tuple
    n_runs: int
    mins: np.ndarray
    q25: np.ndarray
    medians: np.ndarray
    q75: np.ndarray
    maxs: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        for name in ("mins", "q25", "medians", "q75", "maxs", "means"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        stacked = np.stack([self.mins, self.q25, self.medians, self.q75, self.maxs])
        if not (np.diff(stacked, axis=0) >= 0).all():
            raise ValueError("order statistics out of order")
        if n and (self.mins.min() < 1 or self.maxs.max() > n):
            raise ValueError("summarized ranks must lie in [1, N]")


def rank_distribution(runs: list) -> RankDistribution:
    """Summarize a list of RankVector over the same universe."""
    if not runs:
        raise ValueError("need at least one run")
    first = runs[0]
    for run in runs[1:]:
        if run.labels != first.labels or run.universe != first.universe:
            raise ValueError("all runs must share the same feature universe")
    ranks = np.stack([np.asarray(run.ranks, dtype=np.float64) for run in runs])
    ranks_sorted = np.sort(ranks, axis=0)
    m = ranks.shape[0]

    def at(p):
        k = max(1, math.ceil(p / 100.0 * m))
        return ranks_sorted[k - 1].copy()

    return RankDistribution(
        universe=first.universe,
        labels=first.labels,
        n_runs=m,
        mins=ranks_sorted[0].copy(),
        q25=at(25),
        medians=at(50),
        q75=at(75),
        maxs=ranks_sorted[-1].copy(),
        means=ranks.mean(axis=0),
    )


def panel_indices(dist: RankDistribution, k: int, which: str = "top") -> np.ndarray:
    """Indices of the k best ("top") or worst ("bottom") features by mean
    rank across runs, ties broken by ascending feature index."""
    if k < 1 or k > len(dist.labels):
        raise ValueError(f"k must be in [1, {len(dist.labels)}]")
    if which not in ("top", "bottom"):
        raise ValueError("which must be 'top' or 'bottom'")
    idx = np.arange(len(dist.labels))
    key = dist.means if which == "top" else -dist.means
    return np.lexsort((idx, key))[:k]
