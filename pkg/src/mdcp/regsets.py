"""Regression prediction sets via a label-grid scan.

Continuous-label sets are built by scanning a uniform grid over the pooled
observed label range, keeping grid points whose aggregated p-value clears
the level, and widening each maximal run of kept points by one grid spacing
on each side before merging. The result is a closed interval union that is
a superset of the exact acceptance region restricted to the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyLabels

DEGENERATE_EPS_SCALE = 1e-6


@dataclass(frozen=True)
class YGrid:
    """Uniform scan grid over the observed label range."""

    points: np.ndarray  # (M,) increasing
    delta: float        # grid spacing (0 for a degenerate single point)
    degenerate: bool

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def M(self) -> int:
        return self.points.size


def build_grid(train_labels, calib_labels, num_points: int = 100) -> YGrid:
    """Uniform grid spanning pooled train+calibration labels."""
    pooled = np.concatenate([np.asarray(train_labels, dtype=np.float64).ravel(),
                             np.asarray(calib_labels, dtype=np.float64).ravel()])
    if pooled.size == 0:
        raise EmptyLabels("cannot build a label grid from no labels")
    if num_points < 2:
        raise ValueError("grid needs at least 2 points")
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi - lo < 1e-12:
        return YGrid(np.array([lo]), 0.0, True)
    delta = (hi - lo) / (num_points - 1)
    return YGrid(np.linspace(lo, hi, num_points), delta, False)


@dataclass(frozen=True)
class IntervalUnion:
    """Sorted union of disjoint closed intervals (may be empty)."""

    intervals: tuple  # tuple[(lo, hi), ...]

    @classmethod
    def empty(cls) -> "IntervalUnion":
        return cls(())

    @classmethod
    def from_intervals(cls, pairs) -> "IntervalUnion":
        """Merge overlapping or touching closed intervals."""
        pairs = [(float(a), float(b)) for a, b in pairs]
        for a, b in pairs:
            if not a <= b:
                raise ValueError(f"interval [{a}, {b}] is inverted")
        pairs.sort()
        merged: list[list[float]] = []
        for a, b in pairs:
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return cls(tuple((a, b) for a, b in merged))

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros(y.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (y >= a) & (y <= b)
        return out

    def total_length(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    @property
    def is_empty(self) -> bool:
        return len(self.intervals) == 0


def grid_mask_to_union(grid: YGrid, accept: np.ndarray) -> IntervalUnion:
    """Maximal accepted runs widened by one spacing per side, then merged."""
    accept = np.asarray(accept, dtype=bool).ravel()
    if accept.size != grid.M:
        raise ValueError("acceptance mask length != grid size")
    if not accept.any():
        return IntervalUnion.empty()
    if grid.degenerate:
        c = float(grid.points[0])
        eps = max(abs(c), 1.0) * DEGENERATE_EPS_SCALE
        return IntervalUnion.from_intervals([(c - eps, c + eps)])
    idx = np.flatnonzero(accept)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    stops = np.concatenate([idx[breaks], [idx[-1]]])
    pts, d = grid.points, grid.delta
    pairs = [(pts[a] - d, pts[b] + d) for a, b in zip(starts, stops)]
    return IntervalUnion.from_intervals(pairs)


def grid_search_set(p_agg, alpha: float, grid: YGrid) -> IntervalUnion:
    """Keep grid points with aggregated p-value >= alpha; widen and merge."""
    p_agg = np.asarray(p_agg, dtype=np.float64).ravel()
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside (0,1]")
    return grid_mask_to_union(grid, p_agg >= alpha)
