"""Conformal calibration: p-values, max-p aggregation, set construction.

Score convention: throughout the toolkit a *lower* score means a more
conforming (more plausible) label — scores are s = -h(x,y) for a plausibility
mixture h, TPS scores are negated class probabilities, and regression uses
standardized absolute residuals.

Two p-value formulas are provided:

* ``p_value_deterministic``: (1 + #{S_i <= s}) / (1 + n). As written this is
  the p-value of a *larger-is-more-conforming* score, so set builders working
  with the package's lower-is-conforming scores evaluate it on the mirrored
  axis (negated bank and score), which equals (1 + #{S_i >= s}) / (1 + n).
  ``deterministic_p_matrix`` does exactly that.
* ``p_value_randomized``: (#{S_i > s} + (1 + #{S_i = s}) U) / (n + 1), already
  oriented for lower-is-conforming scores and exactly Uniform[0,1] under
  exchangeability. One uniform is drawn per (test point, source) and shared
  across the whole candidate-label scan at that point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadUniform, EmptyVector, NonFinite, UnknownSource


@dataclass(frozen=True)
class CalibrationBank:
    """Per-source sorted calibration scores."""

    scores: tuple[np.ndarray, ...]

    @classmethod
    def from_scores(cls, per_source) -> "CalibrationBank":
        banks = []
        for s in per_source:
            a = np.sort(np.asarray(s, dtype=np.float64).ravel())
            if a.size and not np.all(np.isfinite(a)):
                raise NonFinite("non-finite calibration score")
            a.flags.writeable = False
            banks.append(a)
        return cls(tuple(banks))

    @property
    def K(self) -> int:
        return len(self.scores)

    def source(self, k: int) -> np.ndarray:
        if not 0 <= k < self.K:
            raise UnknownSource(f"source {k} not in [0, {self.K})")
        return self.scores[k]

    def n(self, k: int) -> int:
        return self.source(k).size


@dataclass(frozen=True)
class PValueMode:
    """Deterministic p-values, or randomized with per-source uniforms."""

    kind: str  # "deterministic" | "randomized"
    u: np.ndarray | None = None  # (K,) uniforms for the randomized mode

    def __post_init__(self):
        if self.kind not in ("deterministic", "randomized"):
            raise ValueError(f"unknown p-value mode {self.kind!r}")
        if self.kind == "randomized":
            u = np.asarray(self.u, dtype=np.float64)
            if u.ndim != 1 or np.any(u < 0) or np.any(u > 1):
                raise BadUniform("uniforms must lie in [0,1]")
            object.__setattr__(self, "u", u)

    @classmethod
    def deterministic(cls) -> "PValueMode":
        return cls("deterministic")

    @classmethod
    def randomized(cls, u) -> "PValueMode":
        return cls("randomized", np.atleast_1d(np.asarray(u, dtype=np.float64)))


def p_value_deterministic(bank: CalibrationBank, k: int, s: float) -> float:
    """(1 + #{S_{k,i} <= s}) / (1 + n_k); value in (0, 1]."""
    S = bank.source(k)
    return (1.0 + np.searchsorted(S, s, side="right")) / (1.0 + S.size)


def p_value_randomized(
    bank: CalibrationBank, k: int, s: float, u: float
) -> float:
    """(#{S_{k,i} > s} + (1 + #{S_{k,i} = s}) u) / (n_k + 1); value in [0, 1]."""
    if not 0.0 <= u <= 1.0:
        raise BadUniform(f"u={u} outside [0,1]")
    S = bank.source(k)
    lo = np.searchsorted(S, s, side="left")
    hi = np.searchsorted(S, s, side="right")
    n_gt = S.size - hi
    n_eq = hi - lo
    return (n_gt + (1.0 + n_eq) * u) / (S.size + 1.0)


def max_p(p_values) -> float:
    """Maximum of the K per-source p-values."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        raise EmptyVector("max_p needs at least one p-value")
    return float(p.max())


def randomized_p_matrix(
    bank: CalibrationBank, k: int, s: np.ndarray, u
) -> np.ndarray:
    """Vectorized randomized p-values for an (n, ...) score array.

    ``u`` is scalar or shaped like the leading axis of ``s``; the same uniform
    is shared across the trailing candidate axis, matching the one-uniform-per
    -(test point, source) rule.
    """
    S = bank.source(k)
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0) or np.any(u > 1):
        raise BadUniform("uniforms must lie in [0,1]")
    if u.ndim and u.shape != s.shape:
        u = u.reshape(u.shape + (1,) * (np.ndim(s) - u.ndim))
    lo = np.searchsorted(S, s, side="left")
    hi = np.searchsorted(S, s, side="right")
    return (S.size - hi + (1.0 + hi - lo) * u) / (S.size + 1.0)


def deterministic_p_matrix(
    bank: CalibrationBank, k: int, s: np.ndarray
) -> np.ndarray:
    """Deterministic p-values for lower-is-conforming scores.

    Evaluates the deterministic formula on the mirrored axis:
    (1 + #{S_i >= s}) / (1 + n).
    """
    S = bank.source(k)
    lo = np.searchsorted(S, s, side="left")
    return (1.0 + S.size - lo) / (1.0 + S.size)


def classification_set(
    scores,
    bank: CalibrationBank,
    x: np.ndarray,
    alpha: float,
    mode: PValueMode,
    num_classes: int,
) -> np.ndarray:
    """{y : max_k p^(k)(x, y) >= alpha} — the union of per-source sets.

    ``scores`` is one ScoreFunction (x, y) -> float per source, or a single
    shared one. Scores follow the lower-is-conforming convention.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside (0, 1]")
    K = bank.K
    if callable(scores):
        scores = [scores] * K
    if len(scores) != K:
        raise UnknownSource("need one score function per source")
    keep = []
    for y in range(num_classes):
        pbest = 0.0
        for k in range(K):
            s = float(scores[k](x, y))
            if mode.kind == "randomized":
                u = float(mode.u[k]) if mode.u.size > 1 else float(mode.u[0])
                p = p_value_randomized(bank, k, s, u)
            else:
                p = float(deterministic_p_matrix(bank, k, np.asarray(s)))
            pbest = max(pbest, p)
        if pbest >= alpha:
            keep.append(y)
    return np.asarray(keep, dtype=np.int64)


def empirical_randomized_quantile(
    bank: CalibrationBank, k: int, alpha: float, u: float
) -> float:
    """inf{t : G_U(t) >= alpha} for the randomized empirical cdf

    G_U(t) = (#{W_i < t} + (1 + #{W_i = t}) u) / (n + 1)

    over the bank's stored values W. Returns -inf when every t qualifies
    (e.g. an empty bank with u >= alpha) and +inf when none does.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha={alpha} outside (0, 1)")
    if not 0.0 <= u <= 1.0:
        raise BadUniform(f"u={u} outside [0,1]")
    W = bank.source(k)
    n = W.size
    if u / (n + 1.0) >= alpha:  # G_U below the smallest atom
        return -math.inf
    atoms, counts = np.unique(W, return_counts=True)
    below = np.concatenate(([0], np.cumsum(counts)))
    for j, w in enumerate(atoms):
        at_atom = (below[j] + (1.0 + counts[j]) * u) / (n + 1.0)
        just_above = (below[j + 1] + u) / (n + 1.0)
        if at_atom >= alpha or just_above >= alpha:
            return float(w)
    return math.inf
