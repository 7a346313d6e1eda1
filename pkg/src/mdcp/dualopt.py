"""Learning covariate-dependent multipliers lambda(x) for the shared score.

The efficiency-optimal conformity score is s(x, y) = -h(x, y) with
h(x, y) = sum_k lambda_k(x) fhat_k(y | x). The multipliers maximize the
empirical dual objective

    J(Theta) = mean_i (1 - h(X_i, Y_i))_- / max(phat_pool(Y_i | X_i), floor)
             + (1 - alpha) * mean_i sum_k lambda_k(X_i)
             - gamma * ( mean_i sum_k lambda_k(X_i)^2 + sum_k ||D theta_k||^2 )

over the softplus-spline parameterization lambda_k(x) =
softplus(Lambda(x)' theta_k), where Lambda(x) stacks per-dimension cubic
B-spline blocks plus a constant feature and D is a second-order difference
operator acting within each spline block (never across blocks or on the
bias). (t)_- = min(t, 0). Ascent uses minibatch Adam with full-data
evaluations after every epoch for early stopping; the best-so-far Theta is
returned. Note the multipliers are trained on the same fold that fit the
density models (deliberate data reuse; calibration data stays untouched).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import CalibrationBank, randomized_p_matrix
from .data import MultiSourceData, PooledRows, pool
from .errors import NonFinite
from .regsets import build_grid
from .rng import TAG_TRAIN, TAG_TUNE, TAG_UNIFORMS, stream

LAMBDA_JSON_VERSION = 1
DEFAULT_PENALTY_GRID = (0.0, 0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)


# ---------------------------------------------------------------------------
# B-spline feature map

def _cox_de_boor(t: np.ndarray, x: np.ndarray, span: np.ndarray,
                 degree: int) -> np.ndarray:
    """All degree+1 nonzero B-spline values at x (triangular recurrence)."""
    n = x.size
    N = np.zeros((n, degree + 1))
    N[:, 0] = 1.0
    left = np.zeros((n, degree + 1))
    right = np.zeros((n, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return N


@dataclass(frozen=True)
class BasisMap:
    """Per-dimension clamped uniform B-spline features plus a bias column."""

    knots: np.ndarray   # (d, num_knots + 2*degree) extended knot vectors
    degree: int
    lo: np.ndarray      # (d,) observed range used for clamping
    hi: np.ndarray
    bias: bool = True

    def __post_init__(self):
        for name in ("knots", "lo", "hi"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def d(self) -> int:
        return self.knots.shape[0]

    @property
    def block_size(self) -> int:
        # num_knots + degree - 1 basis functions per dimension
        return self.knots.shape[1] - 2 * self.degree + self.degree - 1

    @property
    def m(self) -> int:
        return self.d * self.block_size + (1 if self.bias else 0)

    @classmethod
    def fit(cls, X, num_knots: int = 5, degree: int = 3,
            bias: bool = True) -> "BasisMap":
        """Knots uniform over the observed per-dimension range."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if num_knots < 2:
            raise ValueError("need at least 2 knots")
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        hi = np.where(hi - lo < 1e-12, lo + 1.0, hi)
        rows = []
        for j in range(X.shape[1]):
            base = np.linspace(lo[j], hi[j], num_knots)
            h = base[1] - base[0]
            rows.append(np.concatenate([
                lo[j] - h * np.arange(degree, 0, -1), base,
                hi[j] + h * np.arange(1, degree + 1)]))
        return cls(np.asarray(rows), degree, lo, hi, bias)

    def transform(self, X) -> np.ndarray:
        """(n, m) feature matrix; queries beyond the range are clamped."""
        X = np.atleast_2d(np.ascontiguousarray(X, dtype=np.float64))
        if X.shape[1] != self.d:
            raise ValueError(f"expected {self.d} columns, got {X.shape[1]}")
        n, p, q = X.shape[0], self.degree, self.block_size
        out = np.zeros((n, self.m))
        rows = np.arange(n)[:, None]
        for j in range(self.d):
            t = self.knots[j]
            x = np.clip(X[:, j], self.lo[j], self.hi[j])
            span = np.clip(np.searchsorted(t, x, side="right") - 1,
                           p, len(t) - p - 2)
            vals = _cox_de_boor(t, x, span, p)
            cols = j * q + (span[:, None] - p + np.arange(p + 1)[None, :])
            out[rows, cols] = vals
        if self.bias:
            out[:, -1] = 1.0
        return out

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist(), "degree": self.degree,
                "lo": self.lo.tolist(), "hi": self.hi.tolist(),
                "bias": self.bias}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisMap":
        return cls(np.asarray(d["knots"]), int(d["degree"]),
                   np.asarray(d["lo"]), np.asarray(d["hi"]), bool(d["bias"]))


def second_diff_operator(basis: BasisMap) -> np.ndarray:
    """Rows (1, -2, 1) within each per-dimension block; bias untouched."""
    q, d, m = basis.block_size, basis.d, basis.m
    rows = []
    for j in range(d):
        for i in range(q - 2):
            r = np.zeros(m)
            r[j * q + i: j * q + i + 3] = (1.0, -2.0, 1.0)
            rows.append(r)
    if not rows:
        return np.zeros((0, m))
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# lambda model

def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LambdaModel:
    """lambda_k(x) = softplus(Lambda(x)' theta_k) > 0."""

    basis: BasisMap
    theta: np.ndarray  # (K, m)

    def __post_init__(self):
        th = np.ascontiguousarray(self.theta, dtype=np.float64)
        if th.ndim != 2 or th.shape[1] != self.basis.m:
            raise ValueError("theta shape incompatible with basis")
        if not np.isfinite(th).all():
            raise NonFinite("theta has non-finite entries")
        th.flags.writeable = False
        object.__setattr__(self, "theta", th)

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    def lambda_matrix(self, X) -> np.ndarray:
        """(n, K) strictly positive multipliers."""
        return _softplus(self.basis.transform(X) @ self.theta.T)

    def lambda_at(self, x) -> np.ndarray:
        return self.lambda_matrix(np.atleast_2d(x))[0]

    def to_dict(self) -> dict:
        return {"version": LAMBDA_JSON_VERSION, "kind": "lambda",
                "basis": self.basis.to_dict(), "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LambdaModel":
        if d.get("version") != LAMBDA_JSON_VERSION or d.get("kind") != "lambda":
            raise ValueError("not a lambda model payload")
        return cls(BasisMap.from_dict(d["basis"]), np.asarray(d["theta"]))


def lambda_at(model: LambdaModel, x) -> np.ndarray:
    return model.lambda_at(x)


# ---------------------------------------------------------------------------
# objective / gradient cores (pure array functions)

def _objective_core(theta, L, F, q, alpha, gamma, D) -> float:
    lam = _softplus(L @ theta.T)         # (n, K)
    h = np.einsum("nk,nk->n", lam, F)
    t1 = float(np.mean(np.minimum(1.0 - h, 0.0) / q))
    t2 = (1.0 - alpha) * float(np.mean(lam.sum(axis=1)))
    if gamma == 0.0:
        return t1 + t2
    pen = float(np.mean((lam * lam).sum(axis=1)))
    pen += float(((theta @ D.T) ** 2).sum())
    return t1 + t2 - gamma * pen


def _gradient_core(theta, L, F, q, alpha, gamma, DtD) -> np.ndarray:
    z = L @ theta.T
    lam = _softplus(z)
    sig = _sigmoid(z)
    h = np.einsum("nk,nk->n", lam, F)
    mask = h >= 1.0  # kink at h=1 uses the h > 1 branch
    c = (-(mask / q))[:, None] * F * sig + (1.0 - alpha) * sig
    if gamma != 0.0:
        c = c - 2.0 * gamma * lam * sig
    grad = c.T @ L / L.shape[0]
    if gamma != 0.0:
        grad = grad - 2.0 * gamma * (theta @ DtD)
    return grad


def _design(basis: BasisMap, per_source, pooled, rows: PooledRows,
            floor: float):
    """Feature matrix, per-source density columns, floored pooled density."""
    X, y = rows.features, rows.labels
    L = basis.transform(X)
    F = np.column_stack([m.density_rows(X, y) for m in per_source])
    q_raw = pooled.density_rows(X, y)
    if not (np.isfinite(F).all() and np.isfinite(q_raw).all()):
        raise NonFinite("density query returned NaN/inf")
    return L, F, np.maximum(q_raw, floor)


@dataclass(frozen=True)
class DualTrainConfig:
    batch_size: int = 256
    max_epochs: int = 200
    step_size: float = 1e-2
    adam_betas: tuple = (0.9, 0.999)
    early_stop_patience: int = 10
    denom_floor: float = 1e-4
    penalty_gamma: float = 0.0
    penalty_grid: tuple = DEFAULT_PENALTY_GRID

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.denom_floor <= 0:
            raise ValueError("denom_floor must be > 0")
        if self.penalty_gamma < 0 or any(g < 0 for g in self.penalty_grid):
            raise ValueError("penalties must be nonnegative")

    def to_dict(self) -> dict:
        return {"batch_size": self.batch_size, "max_epochs": self.max_epochs,
                "step_size": self.step_size,
                "adam_betas": list(self.adam_betas),
                "early_stop_patience": self.early_stop_patience,
                "denom_floor": self.denom_floor,
                "penalty_gamma": self.penalty_gamma,
                "penalty_grid": list(self.penalty_grid)}


def empirical_dual_objective(model: LambdaModel, per_source, pooled,
                             rows: PooledRows, alpha: float,
                             gamma: float = 0.0,
                             floor: float = 1e-4) -> float:
    if rows.n == 0:
        raise ValueError("batch is empty")
    L, F, q = _design(model.basis, per_source, pooled, rows, floor)
    D = second_diff_operator(model.basis)
    return _objective_core(model.theta, L, F, q, alpha, gamma, D)


def objective_gradient(model: LambdaModel, per_source, pooled,
                       rows: PooledRows, alpha: float, gamma: float = 0.0,
                       floor: float = 1e-4) -> np.ndarray:
    if rows.n == 0:
        raise ValueError("batch is empty")
    L, F, q = _design(model.basis, per_source, pooled, rows, floor)
    D = second_diff_operator(model.basis)
    return _gradient_core(model.theta, L, F, q, alpha, gamma, D.T @ D)


def _adam_ascent(L, F, q, alpha, gamma, D, cfg: DualTrainConfig, seed):
    """Minibatch Adam on Theta with per-epoch full-data early stopping."""
    n, K = F.shape[0], F.shape[1]
    m = L.shape[1]
    DtD = D.T @ D
    theta = np.zeros((K, m))
    best_theta, curve = theta.copy(), []
    best = _objective_core(theta, L, F, q, alpha, gamma, D)
    curve.append(best)
    mom = np.zeros_like(theta)
    vel = np.zeros_like(theta)
    b1, b2 = cfg.adam_betas
    t = 0
    stall = 0
    rng = stream(seed, TAG_TRAIN)
    for _epoch in range(cfg.max_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            g = _gradient_core(theta, L[idx], F[idx], q[idx],
                               alpha, gamma, DtD)
            t += 1
            mom = b1 * mom + (1 - b1) * g
            vel = b2 * vel + (1 - b2) * g * g
            mhat = mom / (1 - b1 ** t)
            vhat = vel / (1 - b2 ** t)
            theta = theta + cfg.step_size * mhat / (np.sqrt(vhat) + 1e-8)
        val = _objective_core(theta, L, F, q, alpha, gamma, D)
        if not np.isfinite(val):
            raise NonFinite(
                f"non-finite objective after epoch {len(curve)}; "
                f"|theta|max={np.abs(theta).max():.3e}")
        curve.append(val)
        if val > best:
            best, best_theta, stall = val, theta.copy(), 0
        else:
            stall += 1
            if stall >= cfg.early_stop_patience:
                break
    return best_theta, np.asarray(curve)


def train_lambda(rows: PooledRows, per_source, pooled, alpha: float,
                 cfg: DualTrainConfig | None = None, seed: int = 0,
                 basis: BasisMap | None = None
                 ) -> tuple[LambdaModel, np.ndarray]:
    """Fit lambda(x) by maximizing the empirical dual objective.

    Returns the best-so-far model plus the per-epoch full-data objective
    curve (index 0 is the Theta = 0 initialization, always a candidate).
    """
    if rows.n == 0:
        raise ValueError("training rows are empty")
    cfg = cfg or DualTrainConfig()
    basis = basis or BasisMap.fit(rows.features)
    L, F, q = _design(basis, per_source, pooled, rows, cfg.denom_floor)
    D = second_diff_operator(basis)
    theta, curve = _adam_ascent(L, F, q, alpha, cfg.penalty_gamma, D,
                                cfg, seed)
    return LambdaModel(basis, theta), curve


# ---------------------------------------------------------------------------
# shared score

@dataclass(frozen=True)
class SharedScore:
    """Source-invariant conformity score s(x, y) = -h(x, y); lower is
    more conforming."""

    model: LambdaModel
    per_source: tuple

    def rows(self, X, y) -> np.ndarray:
        lam = self.model.lambda_matrix(X)
        F = np.column_stack([m.density_rows(X, y) for m in self.per_source])
        return -np.einsum("nk,nk->n", lam, F)

    def matrix(self, X, ys=None) -> np.ndarray:
        """(n, M) scores over a shared candidate-label axis."""
        lam = self.model.lambda_matrix(X)
        out = None
        for k, m in enumerate(self.per_source):
            term = lam[:, k, None] * m.density_grid(X, ys)
            out = term if out is None else out + term
        return -out

    def __call__(self, x, y) -> float:
        yarr = np.asarray([y])
        if yarr.dtype.kind in "iu":
            yarr = yarr.astype(np.int64)
        return float(self.rows(np.atleast_2d(x), yarr)[0])


def shared_score(model: LambdaModel, per_source) -> SharedScore:
    return SharedScore(model, tuple(per_source))


# ---------------------------------------------------------------------------
# penalty tuning on a mimic split of the training fold

def union_length_from_mask(accept: np.ndarray, delta: float) -> np.ndarray:
    """Total length of the widened-run union, per row of a boolean matrix.

    Runs widened by delta per side on a uniform grid never overlap after
    merging (adjacent runs at gap 2*delta touch exactly), so the length is
    delta * (#accepted + #runs).
    """
    accept = np.atleast_2d(accept)
    starts = accept.copy()
    starts[:, 1:] &= ~accept[:, :-1]
    return delta * (accept.sum(axis=1) + starts.sum(axis=1))


def _mimic_split(train: MultiSourceData, seed: int):
    """Per-source 50/50 split of the training fold (calib half, test half)."""
    calib_idx, test_idx = [], []
    for k, src in enumerate(train.sources):
        perm = stream(seed, TAG_TUNE, k).permutation(src.n)
        half = src.n // 2
        calib_idx.append(np.sort(perm[:half]))
        test_idx.append(np.sort(perm[half:]))
    return calib_idx, test_idx


def _mean_set_size(score: SharedScore, train: MultiSourceData, calib_idx,
                   test_idx, alpha: float, u_mat: np.ndarray,
                   grid_points: int) -> float:
    """Mean randomized max-p set size over the pooled mimic-test rows."""
    banks = []
    for k, src in enumerate(train.sources):
        sub = src.take(calib_idx[k])
        banks.append(score.rows(sub.features, sub.labels))
    bank = CalibrationBank.from_scores(banks)
    X_test = np.concatenate([train.sources[k].features[test_idx[k]]
                             for k in range(train.K)])
    task = train.task
    if task.is_classification:
        S = score.matrix(X_test)  # (n, C)
        sizes = None
    else:
        labels = np.concatenate([s.labels for s in train.sources])
        grid = build_grid(labels, labels, grid_points)
        S = score.matrix(X_test, grid.points)
    p_max = None
    for k in range(train.K):
        p_k = randomized_p_matrix(bank, k, S, u_mat[:, k])
        p_max = p_k if p_max is None else np.maximum(p_max, p_k)
    accept = p_max >= alpha
    if task.is_classification:
        return float(accept.sum(axis=1).mean())
    return float(union_length_from_mask(accept, grid.delta).mean())


def tune_penalty(train: MultiSourceData, per_source, pooled, alpha: float,
                 cfg: DualTrainConfig | None = None, seed: int = 0,
                 grid_points: int = 100) -> tuple[float, list]:
    """Pick gamma from the grid by mean set size on a mimic test half.

    The training fold is split 50/50 per source into mimic-calibration and
    mimic-test; for each gamma, lambda is trained on the full training fold
    (same seed, shared basis and uniforms, so runs are paired), calibrated
    on the mimic-calibration half, and scored by mean set size on the
    mimic-test half. Ties go to the smaller gamma. The outer experiment's
    calibration/test folds are never touched.
    """
    cfg = cfg or DualTrainConfig()
    if not cfg.penalty_grid:
        raise ValueError("penalty grid is empty")
    rows = pool(train)
    basis = BasisMap.fit(rows.features)
    calib_idx, test_idx = _mimic_split(train, seed)
    n_test = sum(len(t) for t in test_idx)
    u_mat = stream(seed, TAG_TUNE, TAG_UNIFORMS).random((n_test, train.K))
    best_gamma, best_size, table = None, np.inf, []
    for gamma in sorted(cfg.penalty_grid):
        cfg_g = DualTrainConfig(
            batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
            step_size=cfg.step_size, adam_betas=cfg.adam_betas,
            early_stop_patience=cfg.early_stop_patience,
            denom_floor=cfg.denom_floor, penalty_gamma=gamma,
            penalty_grid=cfg.penalty_grid)
        model, _ = train_lambda(rows, per_source, pooled, alpha, cfg_g,
                                seed=seed, basis=basis)
        score = SharedScore(model, tuple(per_source))
        size = _mean_set_size(score, train, calib_idx, test_idx, alpha,
                              u_mat, grid_points)
        table.append({"gamma": gamma, "mean_size": size})
        if size < best_size:
            best_gamma, best_size = gamma, size
    return float(best_gamma), table


def save_lambda_model(model: LambdaModel, path: str) -> None:
    import json
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_lambda_model(path: str) -> LambdaModel:
    import json
    with open(path) as fh:
        return LambdaModel.from_dict(json.load(fh))
