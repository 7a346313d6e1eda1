"""Per-source working models: boosted-tree classifiers and Gaussian
regression models with boosted mean / log-variance functions.

sklearn does the fitting only. Immediately after fit, each ensemble is
converted to a plain-array tree representation and every prediction in the
toolkit goes through the numpy traversal below. That makes predictions
reproducible bit-for-bit, independent of sklearn's predict paths, and makes
JSON round-trips exact (save -> load -> identical outputs). Classifiers use
``init='zero'`` so the raw score is exactly ``learning_rate * sum(leaf
values)`` with no baseline term to serialize.

Regression models follow an out-of-fold discipline for the noise scale:
the mean model used to form residuals for fold j is refit without fold j's
rows, so the log-variance targets are honest (not in-sample residuals).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import (GradientBoostingClassifier,
                              GradientBoostingRegressor)
from sklearn.isotonic import IsotonicRegression

from .errors import (ClassOutOfRange, DegenerateLabels, NonFinite,
                     TooFewSamples)

MODEL_JSON_VERSION = 1
PROB_FLOOR = 1e-8
SIGMA_FLOOR = 1e-3
LOGVAR_TARGET_FLOOR = 1e-40
# The variance model regresses log(r^2) = log(sigma^2) + log(chi^2_1) under
# Gaussian noise, so its conditional mean sits E[log chi^2_1] = -(log 2 +
# Euler gamma) below log(sigma^2); adding the constant back makes sigma(x)
# consistent instead of biased low by exp(-0.635) ~ 0.53.
LOGVAR_DEBIAS = float(np.log(2.0) + np.euler_gamma)


@dataclass(frozen=True)
class BoostedTreesConfig:
    """Shared knobs for all boosted ensembles."""

    num_rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf_size: int = 10

    def __post_init__(self):
        if self.num_rounds < 1 or self.max_depth < 1 or self.min_leaf_size < 1:
            raise ValueError("boosting sizes must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")

    def to_dict(self) -> dict:
        return {"num_rounds": self.num_rounds, "max_depth": self.max_depth,
                "learning_rate": self.learning_rate,
                "min_leaf_size": self.min_leaf_size}

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedTreesConfig":
        return cls(**d)


def _apply_tree(cl, cr, feat, thr, X):
    """Vectorized decision-tree descent; returns leaf index per row."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        f = feat[node]
        live = np.flatnonzero(f >= 0)
        if live.size == 0:
            return node
        x = X[live, f[live]]
        left = x <= thr[node[live]]
        node[live] = np.where(left, cl[node[live]], cr[node[live]])


@dataclass(frozen=True)
class _Tree:
    children_left: np.ndarray
    children_right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray  # per-node leaf value

    def predict(self, X) -> np.ndarray:
        leaf = _apply_tree(self.children_left, self.children_right,
                           self.feature, self.threshold, X)
        return self.value[leaf]

    def to_dict(self) -> dict:
        return {"children_left": self.children_left.tolist(),
                "children_right": self.children_right.tolist(),
                "feature": self.feature.tolist(),
                "threshold": self.threshold.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "_Tree":
        return cls(np.asarray(d["children_left"], dtype=np.int64),
                   np.asarray(d["children_right"], dtype=np.int64),
                   np.asarray(d["feature"], dtype=np.int64),
                   np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["value"], dtype=np.float64))

    @classmethod
    def from_sklearn(cls, tree) -> "_Tree":
        t = tree.tree_
        return cls(t.children_left.astype(np.int64),
                   t.children_right.astype(np.int64),
                   t.feature.astype(np.int64),
                   t.threshold.astype(np.float64),
                   t.value.reshape(-1).astype(np.float64))


@dataclass(frozen=True)
class _TreeEnsemble:
    """Stages x per-stage trees; raw(x) = lr * sum of leaf values."""

    stages: tuple  # tuple[tuple[_Tree, ...], ...]
    learning_rate: float

    @property
    def per_stage(self) -> int:
        return len(self.stages[0])

    def raw(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.zeros((X.shape[0], self.per_stage))
        for stage in self.stages:
            for j, tree in enumerate(stage):
                out[:, j] += tree.predict(X)
        out *= self.learning_rate
        return out[:, 0] if self.per_stage == 1 else out

    def to_dict(self) -> dict:
        return {"learning_rate": self.learning_rate,
                "stages": [[t.to_dict() for t in s] for s in self.stages]}

    @classmethod
    def from_dict(cls, d: dict) -> "_TreeEnsemble":
        stages = tuple(tuple(_Tree.from_dict(t) for t in s)
                       for s in d["stages"])
        return cls(stages, float(d["learning_rate"]))

    @classmethod
    def from_sklearn(cls, est) -> "_TreeEnsemble":
        stages = tuple(tuple(_Tree.from_sklearn(t) for t in stage)
                       for stage in est.estimators_)
        return cls(stages, float(est.learning_rate))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _expit(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class ClassifierModel:
    """Boosted multinomial classifier with floored, renormalized probs."""

    ensemble: _TreeEnsemble
    classes_present: np.ndarray  # sorted labels seen in training
    num_classes: int
    config: BoostedTreesConfig

    def prob_matrix(self, X) -> np.ndarray:
        raw = self.ensemble.raw(X)
        if self.classes_present.size == 2:
            p1 = _expit(raw)
            present = np.column_stack([1.0 - p1, p1])
        else:
            present = _softmax(raw)
        P = np.zeros((present.shape[0], self.num_classes))
        P[:, self.classes_present] = present
        P = np.clip(P, PROB_FLOOR, 1.0)
        return P / P.sum(axis=1, keepdims=True)

    def _check_classes(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.int64)
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ClassOutOfRange(
                f"class outside [0, {self.num_classes})")
        return y

    def density_rows(self, X, y) -> np.ndarray:
        y = self._check_classes(y)
        return self.prob_matrix(X)[np.arange(y.size), y]

    def density_grid(self, X, ys=None) -> np.ndarray:
        P = self.prob_matrix(X)
        if ys is None:
            return P
        return P[:, self._check_classes(ys)]

    def to_dict(self) -> dict:
        return {"version": MODEL_JSON_VERSION, "kind": "classifier",
                "num_classes": self.num_classes,
                "classes_present": self.classes_present.tolist(),
                "config": self.config.to_dict(),
                "ensemble": self.ensemble.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierModel":
        return cls(_TreeEnsemble.from_dict(d["ensemble"]),
                   np.asarray(d["classes_present"], dtype=np.int64),
                   int(d["num_classes"]),
                   BoostedTreesConfig.from_dict(d["config"]))


@dataclass(frozen=True)
class GaussianWorkingModel:
    """mu(x) + heteroscedastic sigma(x) from boosted mean / log-variance."""

    mean_ensemble: _TreeEnsemble
    logvar_ensemble: _TreeEnsemble
    config: BoostedTreesConfig
    folds: int
    # training-time audit trail for the out-of-fold residual discipline
    fold_bounds: tuple = field(default=())    # (start, stop) per fold
    oof_residuals: np.ndarray | None = None

    def mu(self, X) -> np.ndarray:
        return self.mean_ensemble.raw(X)

    def sigma(self, X) -> np.ndarray:
        logvar = self.logvar_ensemble.raw(X) + LOGVAR_DEBIAS
        return np.maximum(SIGMA_FLOOR, np.exp(0.5 * logvar))

    def density_rows(self, X, y) -> np.ndarray:
        mu, sig = self.mu(X), self.sigma(X)
        z = (np.asarray(y, dtype=np.float64) - mu) / sig
        return np.exp(-0.5 * z * z) / (sig * np.sqrt(2.0 * np.pi))

    def density_grid(self, X, ys) -> np.ndarray:
        mu = self.mu(X)[:, None]
        sig = self.sigma(X)[:, None]
        z = (np.asarray(ys, dtype=np.float64)[None, :] - mu) / sig
        return np.exp(-0.5 * z * z) / (sig * np.sqrt(2.0 * np.pi))

    def to_dict(self) -> dict:
        return {"version": MODEL_JSON_VERSION, "kind": "gaussian",
                "folds": self.folds, "config": self.config.to_dict(),
                "mean_ensemble": self.mean_ensemble.to_dict(),
                "logvar_ensemble": self.logvar_ensemble.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianWorkingModel":
        return cls(_TreeEnsemble.from_dict(d["mean_ensemble"]),
                   _TreeEnsemble.from_dict(d["logvar_ensemble"]),
                   BoostedTreesConfig.from_dict(d["config"]),
                   int(d["folds"]))


@dataclass(frozen=True)
class MixtureDensity:
    """Sample-weighted mixture of per-source models (pooled density)."""

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size != len(self.components):
            raise ValueError("weights and components disagree")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a probability vector")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))

    def prob_matrix(self, X) -> np.ndarray:
        out = self.weights[0] * self.components[0].prob_matrix(X)
        for w, c in zip(self.weights[1:], self.components[1:]):
            out += w * c.prob_matrix(X)
        return out

    def density_rows(self, X, y) -> np.ndarray:
        out = self.weights[0] * self.components[0].density_rows(X, y)
        for w, c in zip(self.weights[1:], self.components[1:]):
            out += w * c.density_rows(X, y)
        return out

    def density_grid(self, X, ys=None) -> np.ndarray:
        out = self.weights[0] * self.components[0].density_grid(X, ys)
        for w, c in zip(self.weights[1:], self.components[1:]):
            out += w * c.density_grid(X, ys)
        return out

    def to_dict(self) -> dict:
        return {"version": MODEL_JSON_VERSION, "kind": "mixture",
                "weights": self.weights.tolist(),
                "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureDensity":
        comps = tuple(model_from_dict(c) for c in d["components"])
        return cls(np.asarray(d["weights"]), comps)


# ---------------------------------------------------------------------------
# fitting

def _check_features(X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if not np.isfinite(X).all():
        raise NonFinite("features contain NaN/inf")
    return X


def fit_classifier(features, labels, num_classes: int,
                   config: BoostedTreesConfig | None = None,
                   seed: int = 0) -> ClassifierModel:
    config = config or BoostedTreesConfig()
    X = _check_features(features)
    y = np.asarray(labels, dtype=np.int64)
    present = np.unique(y)
    if present.size < 2:
        raise DegenerateLabels(
            f"need >= 2 distinct labels, saw {present.size}")
    if present.min() < 0 or present.max() >= num_classes:
        raise DegenerateLabels("labels outside [0, num_classes)")
    clf = GradientBoostingClassifier(
        n_estimators=config.num_rounds, max_depth=config.max_depth,
        learning_rate=config.learning_rate,
        min_samples_leaf=config.min_leaf_size,
        init="zero", random_state=seed % (2 ** 32))
    clf.fit(X, y)
    return ClassifierModel(_TreeEnsemble.from_sklearn(clf),
                           present, num_classes, config)


def _fit_regressor(X, y, config, seed):
    reg = GradientBoostingRegressor(
        n_estimators=config.num_rounds, max_depth=config.max_depth,
        learning_rate=config.learning_rate,
        min_samples_leaf=config.min_leaf_size,
        init="zero", random_state=seed % (2 ** 32))
    reg.fit(X, y)
    return _TreeEnsemble.from_sklearn(reg)


def contiguous_folds(n: int, folds: int):
    """Deterministic contiguous fold index blocks (no shuffling)."""
    return [np.asarray(a) for a in np.array_split(np.arange(n), folds)]


def fit_gaussian(features, labels, config: BoostedTreesConfig | None = None,
                 seed: int = 0, folds: int = 5) -> GaussianWorkingModel:
    config = config or BoostedTreesConfig()
    X = _check_features(features)
    y = np.asarray(labels, dtype=np.float64)
    if not np.isfinite(y).all():
        raise NonFinite("labels contain NaN/inf")
    n = y.size
    if n < 2 * folds:
        raise TooFewSamples(f"need >= {2 * folds} rows for {folds} folds")
    mean_ens = _fit_regressor(X, y, config, seed)
    oof = np.empty(n)
    bounds = []
    for block in contiguous_folds(n, folds):
        bounds.append((int(block[0]), int(block[-1]) + 1))
        rest = np.setdiff1d(np.arange(n), block, assume_unique=True)
        model_j = _fit_regressor(X[rest], y[rest], config, seed)
        oof[block] = y[block] - model_j.raw(X[block])
    targets = np.log(np.maximum(oof * oof, LOGVAR_TARGET_FLOOR))
    logvar_ens = _fit_regressor(X, targets, config, seed)
    oof.flags.writeable = False
    return GaussianWorkingModel(mean_ens, logvar_ens, config, folds,
                                tuple(bounds), oof)


def mixture_pool(models, weights) -> MixtureDensity:
    """Pooled density as the sample-weighted mixture of fitted models."""
    return MixtureDensity(np.asarray(weights, dtype=np.float64),
                          tuple(models))


# ---------------------------------------------------------------------------
# optional post-fit probability calibration (off by default; nothing in the
# experiment pipeline applies it — coverage guarantees never depend on it)

@dataclass(frozen=True)
class CalibratedClassifier:
    """Classifier wrapped with per-class isotonic recalibration maps."""

    base: ClassifierModel
    knots: tuple  # per class: (inputs, outputs) of the isotonic step map

    @property
    def num_classes(self) -> int:
        return self.base.num_classes

    def prob_matrix(self, X) -> np.ndarray:
        P = self.base.prob_matrix(X)
        out = np.empty_like(P)
        for c in range(self.num_classes):
            xk, yk = self.knots[c]
            out[:, c] = np.interp(P[:, c], xk, yk)
        out = np.clip(out, PROB_FLOOR, 1.0)
        return out / out.sum(axis=1, keepdims=True)

    def density_rows(self, X, y) -> np.ndarray:
        y = self.base._check_classes(y)
        return self.prob_matrix(X)[np.arange(y.size), y]

    def density_grid(self, X, ys=None) -> np.ndarray:
        P = self.prob_matrix(X)
        if ys is None:
            return P
        return P[:, self.base._check_classes(ys)]

    def to_dict(self) -> dict:
        return {"version": MODEL_JSON_VERSION, "kind": "calibrated",
                "base": self.base.to_dict(),
                "knots": [[xk.tolist(), yk.tolist()]
                          for xk, yk in self.knots]}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratedClassifier":
        knots = tuple((np.asarray(xk, dtype=np.float64),
                       np.asarray(yk, dtype=np.float64))
                      for xk, yk in d["knots"])
        return cls(ClassifierModel.from_dict(d["base"]), knots)


def calibrate_classifier(model: ClassifierModel, features, labels,
                         folds: int = 5, seed: int = 0) -> CalibratedClassifier:
    """Fit per-class isotonic maps on out-of-fold predicted probabilities.

    The maps are learned cross-validated: each row's predicted probability
    comes from a model refit without that row's fold, so the calibration
    targets are never fit to in-sample predictions.
    """
    X = _check_features(features)
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < 2 * folds:
        raise TooFewSamples(f"need >= {2 * folds} rows for {folds} folds")
    oof = np.empty((n, model.num_classes))
    for block in contiguous_folds(n, folds):
        rest = np.setdiff1d(np.arange(n), block, assume_unique=True)
        fold_model = fit_classifier(X[rest], y[rest], model.num_classes,
                                    model.config, seed)
        oof[block] = fold_model.prob_matrix(X[block])
    knots = []
    for c in range(model.num_classes):
        iso = IsotonicRegression(y_min=0.0, y_max=1.0,
                                 out_of_bounds="clip")
        iso.fit(oof[:, c], (y == c).astype(np.float64))
        knots.append((np.asarray(iso.X_thresholds_, dtype=np.float64),
                      np.asarray(iso.y_thresholds_, dtype=np.float64)))
    return CalibratedClassifier(model, tuple(knots))


# ---------------------------------------------------------------------------
# JSON round trip

_KINDS = {"classifier": ClassifierModel, "gaussian": GaussianWorkingModel,
          "mixture": MixtureDensity, "calibrated": CalibratedClassifier}


def model_from_dict(d: dict) -> object:
    if d.get("version") != MODEL_JSON_VERSION:
        raise ValueError(f"unsupported model version {d.get('version')!r}")
    kind = d.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    return _KINDS[kind].from_dict(d)


def save_model(model, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path: str) -> object:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
