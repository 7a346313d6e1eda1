"""Exact solver for small discrete instances of the worst-case coverage
program.

For a discrete label space with counting measure, the population problem

    min_I  sum_y m_y I(y)   s.t.  sum_y m_y f_k(y) I(y) >= 1 - alpha,
                                   I(y) in [0, 1]

has the concave piecewise-linear dual

    Phi(lam) = (1 - alpha) sum_k lam_k - sum_y m_y (h_lam(y) - 1)_+ ,
    h_lam(y) = sum_k lam_k f_k(y),  lam >= 0.

The dual is maximized exactly by enumerating the vertices of the hyperplane
arrangement {h_lam(y) = 1} union {lam_k = 0} (supergradient ascent is used
only as a warm-start candidate). The optimal set is {h > 1} plus tie-set
inclusion probabilities found by a small feasibility LP; the primal is also
solved independently by a generic LP as a cross-check. Marginal instances
(finite covariate grid) reduce to the same weighted form over (x, y) cells.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import NegativeLambda, NumericalFailure

ACTIVITY_TOL = 1e-6   # lambda_k above this counts as an active source
TIE_TOL = 1e-8        # |h - 1| below this counts as a tie label
ENUM_CAP = 200_000    # max vertex candidates before the LP fallback


@dataclass(frozen=True)
class GridPart:
    """Finite covariate grid for marginal instances."""

    points: np.ndarray  # (G,)
    nu: np.ndarray      # (G,) base-measure weights, > 0
    r: np.ndarray       # (K, G) covariate densities wrt nu

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).ravel()
        nu = np.asarray(self.nu, dtype=np.float64).ravel()
        r = np.atleast_2d(np.asarray(self.r, dtype=np.float64))
        if pts.size != nu.size or r.shape[1] != pts.size:
            raise ValueError("grid points / nu / r shapes disagree")
        if pts.size > 16:
            raise ValueError("grid capped at 16 points")
        if np.any(nu <= 0):
            raise ValueError("nu weights must be positive")
        if np.any(r < 0):
            raise ValueError("r must be nonnegative")
        total = r @ nu
        if np.any(np.abs(total - 1.0) > 1e-9):
            raise ValueError("each r_k must integrate to 1 against nu")
        for name, a in (("points", pts), ("nu", nu), ("r", r)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def G(self) -> int:
        return self.points.size


@dataclass(frozen=True)
class DiscreteInstance:
    """K conditional pmfs over L labels, optionally with a covariate grid."""

    alpha: float
    f: np.ndarray  # (K, L) rows summing to 1
    labels: tuple[str, ...] | None = None
    grid: GridPart | None = None

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.f, dtype=np.float64))
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha={self.alpha} outside (0,1)")
        if f.shape[0] > 4 or f.shape[1] > 12:
            raise ValueError("instances capped at K <= 4, L <= 12")
        if np.any(f < 0):
            raise ValueError("pmf entries must be nonnegative")
        if np.any(np.abs(f.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("each f_k must sum to 1 within 1e-12")
        if self.grid is not None and self.grid.r.shape[0] != f.shape[0]:
            raise ValueError("grid r and f disagree on K")
        f.flags.writeable = False
        object.__setattr__(self, "f", f)
        if self.labels is not None:
            if len(self.labels) != f.shape[1]:
                raise ValueError("labels length != L")
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def K(self) -> int:
        return self.f.shape[0]

    @property
    def L(self) -> int:
        return self.f.shape[1]

    @classmethod
    def from_json(cls, path: str) -> "DiscreteInstance":
        with open(path) as fh:
            d = json.load(fh)
        grid = None
        if d.get("grid"):
            g = d["grid"]
            grid = GridPart(np.asarray(g["points"]), np.asarray(g["nu"]),
                            np.asarray(g["r"]))
        raw_labels = d.get("labels")
        if raw_labels is not None and not isinstance(raw_labels, (list, tuple)):
            raise ValueError("labels must be a list of label names or null")
        labels = tuple(raw_labels) if raw_labels else None
        return cls(float(d["alpha"]), np.asarray(d["f"]), labels, grid)

    def to_json(self, path: str) -> None:
        d = {"alpha": self.alpha, "K": self.K,
             "labels": list(self.labels) if self.labels else None,
             "f": self.f.tolist()}
        if self.grid is not None:
            d["grid"] = {"points": self.grid.points.tolist(),
                         "nu": self.grid.nu.tolist(),
                         "r": self.grid.r.tolist()}
        with open(path, "w") as fh:
            json.dump(d, fh, indent=1)


@dataclass(frozen=True)
class DualCertificate:
    """Solution certificate: multipliers, values, inclusion, slackness."""

    lambda_star: np.ndarray       # (K,)
    dual_value: float
    primal_value: float
    inclusion: np.ndarray         # (L,) conditional, (G, L) marginal
    per_source_coverage: np.ndarray  # (K,)
    tie_set: np.ndarray           # flat indices with h = 1
    active: np.ndarray            # (K,) bool, lambda_k > ACTIVITY_TOL
    gap: float
    tie_nonunique: bool           # tie set has positive measure

    def to_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star.tolist(),
            "dual_value": self.dual_value,
            "primal_value": self.primal_value,
            "inclusion": self.inclusion.tolist(),
            "per_source_coverage": self.per_source_coverage.tolist(),
            "tie_set": self.tie_set.tolist(),
            "active": self.active.astype(bool).tolist(),
            "gap": self.gap,
            "tie_nonunique": bool(self.tie_nonunique),
        }


@dataclass(frozen=True)
class CertificateReport:
    """Per-check pass/fail with residuals, recomputed from scratch."""

    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": self.checks}


# ---------------------------------------------------------------------------
# weighted-problem core: measure weights w (J,), densities F (K, J)

def _dual_value_w(lam: np.ndarray, w: np.ndarray, F: np.ndarray,
                  alpha: float) -> float:
    h = lam @ F
    return float((1.0 - alpha) * lam.sum()
                 - np.dot(w, np.clip(h - 1.0, 0.0, None)))


def _ascent(w, F, alpha, iters=300):
    """Projected supergradient ascent; warm-start candidate only."""
    K = F.shape[0]
    lam = np.full(K, 0.5)
    best_v, best_lam = _dual_value_w(lam, w, F, alpha), lam.copy()
    for t in range(1, iters + 1):
        h = lam @ F
        g = (1.0 - alpha) - F @ (w * (h >= 1.0))
        lam = np.clip(lam + (0.5 / math.sqrt(t)) * g, 0.0, None)
        v = _dual_value_w(lam, w, F, alpha)
        if v > best_v:
            best_v, best_lam = v, lam.copy()
    return best_lam, best_v


def _enumerate_vertices(w, F, alpha):
    """Exact max over all K-subsets of {h(y)=1} and {lam_k=0} hyperplanes."""
    K, J = F.shape
    normals = np.vstack([F.T, np.eye(K)])          # (J+K, K)
    rhs = np.concatenate([np.ones(J), np.zeros(K)])
    idx = np.array(list(itertools.combinations(range(J + K), K)))
    A = normals[idx]                               # (ncomb, K, K)
    b = rhs[idx]
    scale = np.maximum(1.0, np.abs(A).max(axis=(1, 2))) ** K
    good = np.abs(np.linalg.det(A)) > 1e-12 * scale
    lam = np.linalg.solve(A[good], b[good][..., None])[..., 0]
    feas = np.all(lam >= -1e-9, axis=1)
    lam = np.clip(lam[feas], 0.0, None)
    if lam.size == 0:
        lam = np.zeros((1, K))
    h = lam @ F                                    # (ncand, J)
    vals = (1.0 - alpha) * lam.sum(axis=1) - np.clip(h - 1.0, 0.0, None) @ w
    i = int(np.argmax(vals))
    return lam[i], float(vals[i])


def _epigraph_lp(w, F, alpha):
    """Exact PL maximization as an LP: max (1-a)1'lam - w't,
    t >= h - 1, t >= 0."""
    K, J = F.shape
    c = np.concatenate([-(1.0 - alpha) * np.ones(K), w])
    A_ub = np.hstack([F.T, -np.eye(J)])
    b_ub = np.ones(J)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub,
                  bounds=[(0, None)] * (K + J), method="highs")
    if not res.success:
        raise NumericalFailure(f"dual epigraph LP failed: {res.message}")
    lam = np.clip(res.x[:K], 0.0, None)
    return lam, _dual_value_w(lam, w, F, alpha)


def _tie_lp(w_T, F_T, targets, active):
    """Minimal-measure tie inclusion: min w'Z subject to the slackness
    system (equalities for active sources, >= for inactive), Z in [0,1]."""
    nT = w_T.size
    coeff = F_T * w_T  # (K, nT)
    A_eq = coeff[active] if active.any() else None
    b_eq = targets[active] if active.any() else None
    inact = ~active
    A_ub = -coeff[inact] if inact.any() else None
    b_ub = -(targets[inact] - 1e-12) if inact.any() else None
    res = linprog(w_T, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(0, 1)] * nT, method="highs")
    if not res.success and active.any():
        # float noise can make exact equalities infeasible; relax to a band
        slack = np.full(active.sum(), 1e-7)
        A2 = np.vstack([coeff[active], -coeff[active]])
        b2 = np.concatenate([b_eq + slack, -(b_eq - slack)])
        if A_ub is not None:
            A2 = np.vstack([A2, A_ub])
            b2 = np.concatenate([b2, b_ub])
        res = linprog(w_T, A_ub=A2, b_ub=b2,
                      bounds=[(0, 1)] * nT, method="highs")
    if not res.success:
        raise NumericalFailure(f"tie-set LP failed: {res.message}")
    return np.clip(res.x, 0.0, 1.0)


def _solve_weighted(w, F, alpha, shape) -> DualCertificate:
    K, J = F.shape
    ncomb = math.comb(J + K, K)
    if ncomb <= ENUM_CAP:
        lam, val = _enumerate_vertices(w, F, alpha)
    else:
        lam, val = _epigraph_lp(w, F, alpha)
    lam_a, val_a = _ascent(w, F, alpha)
    if val_a > val + 1e-9:  # never expected; exact methods own ties
        lam, val = lam_a, val_a

    h = lam @ F
    tie = np.abs(h - 1.0) <= TIE_TOL
    ones = h > 1.0 + TIE_TOL
    active = lam > ACTIVITY_TOL
    a = F[:, ones] @ w[ones]
    targets = (1.0 - alpha) - a

    inclusion = np.zeros(J)
    inclusion[ones] = 1.0
    if tie.any():
        inclusion[tie] = _tie_lp(w[tie], F[:, tie], targets, active)
    coverage = F @ (w * inclusion)
    primal = float(np.dot(w, inclusion))
    gap = abs(val - primal)
    if gap > 1e-6:
        raise NumericalFailure(f"duality gap {gap:.3e} exceeds 1e-6")
    return DualCertificate(
        lambda_star=lam,
        dual_value=val,
        primal_value=primal,
        inclusion=inclusion.reshape(shape),
        per_source_coverage=coverage,
        tie_set=np.flatnonzero(tie),
        active=active,
        gap=gap,
        tie_nonunique=bool(tie.any() and w[tie].sum() > 0),
    )


# ---------------------------------------------------------------------------
# public operations

def cond_dual_value(inst: DiscreteInstance, lam) -> float:
    """Phi_x(lam) for the conditional dual with counting measure."""
    lam = np.asarray(lam, dtype=np.float64).ravel()
    if lam.size != inst.K:
        raise ValueError("lambda length != K")
    if np.any(lam < 0):
        raise NegativeLambda(f"lambda has negative entries: {lam}")
    return _dual_value_w(lam, np.ones(inst.L), inst.f, inst.alpha)


def solve_cond_dual(inst: DiscreteInstance) -> DualCertificate:
    """Maximize the conditional dual exactly and emit a full certificate."""
    return _solve_weighted(np.ones(inst.L), inst.f, inst.alpha, (inst.L,))


def solve_primal_lp(inst: DiscreteInstance) -> tuple[float, np.ndarray]:
    """Independent primal solve: min sum I s.t. f_k'I >= 1-alpha, I in [0,1]."""
    res = linprog(np.ones(inst.L), A_ub=-inst.f,
                  b_ub=-(1.0 - inst.alpha) * np.ones(inst.K),
                  bounds=[(0, 1)] * inst.L, method="highs")
    if not res.success:
        raise NumericalFailure(f"primal LP failed: {res.message}")
    return float(res.fun), np.clip(res.x, 0.0, 1.0)


def marginal_dual_value(inst: DiscreteInstance, lam) -> float:
    """Phi(lam) for the marginal dual over the (x, y) cell grid."""
    lam = np.asarray(lam, dtype=np.float64).ravel()
    if np.any(lam < 0):
        raise NegativeLambda(f"lambda has negative entries: {lam}")
    w, F = _marginal_cells(inst)
    return _dual_value_w(lam, w, F, inst.alpha)


def _marginal_cells(inst: DiscreteInstance):
    if inst.grid is None:
        raise ValueError("marginal solve needs a covariate grid")
    g = inst.grid
    F = np.einsum("kg,kl->kgl", g.r, inst.f).reshape(inst.K, g.G * inst.L)
    w = np.repeat(g.nu, inst.L)
    return w, F


def solve_marginal_dual(inst: DiscreteInstance) -> DualCertificate:
    """Maximize the marginal dual (constant lambda) over the cell grid."""
    w, F = _marginal_cells(inst)
    return _solve_weighted(w, F, inst.alpha, (inst.grid.G, inst.L))


def verify_certificate(inst: DiscreteInstance, cert: DualCertificate,
                       tol: float = 1e-6) -> CertificateReport:
    """Recompute every certificate invariant from scratch; never raises."""
    if inst.grid is None:
        w, F = np.ones(inst.L), inst.f
    else:
        w, F = _marginal_cells(inst)
    lam = np.asarray(cert.lambda_star, dtype=np.float64)
    incl = np.asarray(cert.inclusion, dtype=np.float64).ravel()
    checks = {}

    def check(name, residual, bound):
        checks[name] = {"ok": bool(residual <= bound),
                        "residual": float(residual), "bound": float(bound)}

    dual = _dual_value_w(np.clip(lam, 0.0, None), w, F, inst.alpha)
    primal = float(np.dot(w, incl))
    coverage = F @ (w * incl)
    target = 1.0 - inst.alpha
    active = lam > ACTIVITY_TOL

    check("lambda_nonnegative", float(np.clip(-lam, 0.0, None).max()), 1e-12)
    check("inclusion_in_unit", float(np.maximum(
        np.clip(-incl, 0, None), np.clip(incl - 1.0, 0, None)).max()), 1e-9)
    check("duality_gap", abs(dual - primal), tol)
    check("dual_value_recomputed", abs(dual - cert.dual_value), 1e-9)
    check("primal_value_recomputed", abs(primal - cert.primal_value), 1e-9)
    # coverage_k >= 1 - alpha - 1e-9
    check("feasibility", float(np.clip(target - coverage, 0.0, None).max()),
          1e-9)
    if active.any():
        check("slackness_active",
              float(np.abs(coverage[active] - target).max()), tol)
    else:
        check("slackness_active", 0.0, tol)
    check("nontrivial_lambda", float(max(0.0, 1e-12 - lam.sum())), 0.0)
    h = lam @ F
    bad_hi = np.clip(1.0 - incl[h > 1.0 + 1e-9], 0.0, None)
    bad_lo = np.clip(incl[h < 1.0 - 1e-9], 0.0, None)
    resid = 0.0
    if bad_hi.size:
        resid = max(resid, float(bad_hi.max()))
    if bad_lo.size:
        resid = max(resid, float(bad_lo.max()))
    check("threshold_form", resid, 1e-9)
    return CertificateReport(checks)


def make_random_instance(rng: np.random.Generator, K: int, L: int,
                         alpha: float, with_grid: bool = False,
                         G: int = 2) -> DiscreteInstance:
    """Seeded random instance: Dirichlet(1) pmfs, optional counting-nu grid."""
    f = rng.gamma(1.0, size=(K, L)) + 1e-3
    f /= f.sum(axis=1, keepdims=True)
    grid = None
    if with_grid:
        r = rng.gamma(1.0, size=(K, G)) + 1e-3
        r /= r.sum(axis=1, keepdims=True)
        grid = GridPart(np.sort(rng.normal(size=G)), np.ones(G), r)
    return DiscreteInstance(alpha, f, None, grid)
