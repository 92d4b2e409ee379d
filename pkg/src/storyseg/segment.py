"""Temporally constrained clustering of embedded shots.

Minimizes total within-group sum of squares plus ``C * g(m, n)`` over all
contiguous partitions by dynamic programming. The table of best objectives
per change-point count does not depend on ``C``, so a sweep over ``C`` only
re-runs the final argmin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Segmentation


@dataclass(frozen=True)
class WssTable:
    """``by_end[k, j]`` is the WSS of shots ``[k, j)``; entries with ``j <= k`` are 0."""

    by_end: np.ndarray

    @property
    def n(self) -> int:
        return self.by_end.shape[0] - 1

    def __getitem__(self, key) -> float:
        k, d = key
        if d < 1 or k < 0 or k + d > self.n:
            raise IndexError(f"segment start {k} duration {d} outside {self.n} shots")
        return float(self.by_end[k, k + d])


def compute_wss_table(embedded) -> WssTable:
    """WSS of every contiguous segment from pairwise squared distances.

    For each start ``k`` (processed right to left) the column sums
    ``sum_{a=k}^{j-1} |x_a - x_j|^2`` are updated in O(n), and a cumulative
    sum over ``j`` yields the pairwise total of ``[k, j)``. All summands are
    nonnegative, so there is no cancellation.
    """
    X = np.atleast_2d(np.asarray(embedded, dtype=float))
    n = X.shape[0]
    if n == 0:
        raise ValueError("need at least one embedded shot")
    table = np.zeros((n + 1, n + 1))
    col = np.zeros(n)
    for k in range(n - 1, -1, -1):
        diff = X[k + 1 :] - X[k]
        col[k + 1 :] += np.einsum("ij,ij->i", diff, diff)
        pair_sums = np.cumsum(col[k + 1 :])
        table[k, k + 2 :] = pair_sums / np.arange(2, n - k + 1)
    return WssTable(table)


def penalty(m: int, n: int) -> float:
    """``m * (ln(n/m) + 1)``; ``m = 0`` (no change points) costs nothing."""
    if m == 0:
        return 0.0
    if m < 1 or m > n:
        raise ValueError(f"penalty needs 1 <= m <= n, got m={m}, n={n}")
    return m * (math.log(n / m) + 1.0)


def penalties(n: int) -> np.ndarray:
    """``g(m, n)`` for ``m = 0 .. n-1``."""
    m = np.arange(n, dtype=float)
    out = np.zeros(n)
    out[1:] = m[1:] * (np.log(n / m[1:]) + 1.0)
    return out


@dataclass(frozen=True)
class DpState:
    """``D[m, j]``: best TWSS of the first ``j`` shots with ``m`` change points."""

    D: np.ndarray
    back: np.ndarray

    @property
    def n(self) -> int:
        return self.D.shape[1] - 1

    def totals(self) -> np.ndarray:
        return self.D[:, self.n]

    def boundaries(self, m: int) -> list[int]:
        """Story start ordinals of the best ``m``-change-point partition."""
        cuts, j = [], self.n
        for level in range(m, 0, -1):
            j = int(self.back[level, j])
            cuts.append(j)
        return [0] + cuts[::-1]


def fill_dp(table: WssTable) -> DpState:
    n = table.n
    W = table.by_end
    D = np.full((n, n + 1), np.inf)
    back = np.zeros((n, n + 1), dtype=int)
    D[0, 1:] = W[0, 1:]
    empty = np.tril(np.ones((n + 1, n + 1), dtype=bool))
    for m in range(1, n):
        # candidate last segment [k, j) for k in m..j-1
        cand = np.where(empty, np.inf, D[m - 1, :, None] + W)
        cand[:m, :] = np.inf
        # argmin returns the first minimum: the earliest boundary wins ties
        back[m] = np.argmin(cand, axis=0)
        D[m] = cand[back[m], np.arange(n + 1)]
    return DpState(D, back)


def _select(totals: np.ndarray, g: np.ndarray, C: float) -> int:
    # argmin returns the smallest m among ties: the coarser segmentation wins
    return int(np.argmin(totals + C * g))


def segment_video(embedded, C: float, edges=None) -> tuple[Segmentation, float]:
    """Globally optimal penalized segmentation for a fixed ``C``.

    Returns the segmentation and its objective ``TWSS + C * g(m, n)``.
    """
    if C < 0:
        raise ValueError("C must be nonnegative")
    state = fill_dp(compute_wss_table(embedded))
    n = state.n
    g = penalties(n)
    totals = state.totals()
    m = _select(totals, g, C)
    seg = Segmentation.from_boundaries(state.boundaries(m), n, edges)
    return seg, float(totals[m] + C * g[m])


def sweep_trace(embedded, Cs) -> list[tuple[float, int, float]]:
    """``(C, m*, objective)`` for every ``C`` in ``Cs``."""
    state = fill_dp(compute_wss_table(embedded))
    totals, g = state.totals(), penalties(state.n)
    out = []
    for C in Cs:
        m = _select(totals, g, C)
        out.append((float(C), m, float(totals[m] + C * g[m])))
    return out


@dataclass(frozen=True)
class SweepResult:
    segmentation: Segmentation
    C: float
    steps: int
    capped: bool


def auto_segment(embedded, step: float = 0.001, max_steps: int = 10_000_000, edges=None) -> SweepResult:
    """Increase ``C`` in increments of ``step`` until fewer stories than shots are chosen.

    The first qualifying step is located directly from the DP totals (the
    result is identical to stepping one increment at a time). If no step up
    to ``max_steps`` qualifies, the segmentation at the cap is returned with
    ``capped=True``.
    """
    X = np.atleast_2d(np.asarray(embedded, dtype=float))
    n = X.shape[0]
    if n == 1:
        return SweepResult(Segmentation.single(1, edges), step, 0, False)
    state = fill_dp(compute_wss_table(X))
    totals, g = state.totals(), penalties(n)
    k = _first_step(totals, g, step, max_steps)
    capped = k is None
    if capped:
        k = max_steps
    C = k * step
    m = _select(totals, g, C)
    return SweepResult(Segmentation.from_boundaries(state.boundaries(m), n, edges), C, k, capped)


def _first_step(totals, g, step, max_steps):
    """Smallest ``k >= 1`` with ``argmin(totals + k*step*g) < n-1``."""
    n = len(totals)
    top = n - 1
    # m < top beats the all-singletons solution once C*(g[top]-g[m]) >= totals[m] - totals[top]
    gap = g[top] - g[:top]
    need = totals[:top] - totals[top]
    with np.errstate(divide="ignore", invalid="ignore"):
        thresh = np.where(gap > 0, need / gap, np.inf)
    c_star = float(np.min(thresh)) if top > 0 else 0.0
    if not np.isfinite(c_star):
        return None
    k = max(1, int(math.floor(c_star / step)) - 2)
    if k > max_steps:
        return None
    while k <= max_steps:
        if _select(totals, g, k * step) < top:
            return k
        k += 1
    return None
