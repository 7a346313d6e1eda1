"""Synthetic data-generating processes for the simulation suites.

Shared design: K sources over d features with equicorrelated covariance
Sigma = 0.2 * 11' + 0.8 * I (unit diagonal), and labels depending on X only
through a per-run informative set of 4 coordinates. Heterogeneity enters
the conditional label law through a temperature tau (main suites) and/or
through mean-shifted covariates along a random informative direction
(shift suites, magnitude delta_x with mu_2 - mu_3 = 2 * delta_x * v).

Classification uses a multinomial logit with per-source signal strength
xi_k, intercepts b_kc and slopes beta_kc = base_c + tau * perturbation;
classes c >= 1 additionally receive a shared nonlinear term g(x).
Regression uses Y = beta_k'x + b_k + g(x) + eps with per-source Gaussian
noise calibrated so that Var(mu_k(X_k)) / sigma_k^2 equals a drawn
signal-to-noise ratio on the realized design.

Everything is a pure function of (config, run index): hyperparameters come
from one seeded stream, then each source's rows come from its own stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MultiSourceData, SourceDataset, TaskKind
from .rng import TAG_DRAW, TAG_HYPER, stream

SUITES = ("Linear", "NonlinearInteraction", "NonlinearSinusoid",
          "NonlinearSoftplus", "Temperature", "CovariateShift",
          "CovariateAndConceptShift")
_SHIFT_SUITES = ("CovariateShift", "CovariateAndConceptShift")
_NONLINEAR = {"NonlinearInteraction": "interaction",
              "NonlinearSinusoid": "sinusoid",
              "NonlinearSoftplus": "softplus"}
NUM_INFORMATIVE = 4


@dataclass(frozen=True)
class SuiteConfig:
    """One simulation suite; all draws derive from (seed, run)."""

    suite: str
    K: int = 3
    d: int = 10
    C: int = 6            # classification classes
    tau: float = 2.5
    delta_x: float = 0.0  # covariate-shift magnitude (shift suites)
    n_per_source: int = 2000
    alpha: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}")
        if self.tau < 0 or self.delta_x < 0:
            raise ValueError("tau and delta_x must be nonnegative")
        if self.K < 1 or self.C < 2 or self.n_per_source < 1:
            raise ValueError("K, C, n_per_source must be positive")
        if self.d < NUM_INFORMATIVE:
            raise ValueError(f"d must be >= {NUM_INFORMATIVE}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha={self.alpha} outside (0,1)")

    @property
    def is_shift(self) -> bool:
        return self.suite in _SHIFT_SUITES


@dataclass(frozen=True)
class DrawnHyperparams:
    """Per-run hyperparameters; coefficients vanish off the informative set."""

    informative: np.ndarray       # (4,) sorted coordinate indices
    mu_x: np.ndarray              # (K, d) covariate means
    # classification
    xi: np.ndarray | None = None          # (K,)
    intercepts_c: np.ndarray | None = None  # (K, C)
    slopes_c: np.ndarray | None = None      # (K, C, d)
    # regression
    beta_r: np.ndarray | None = None       # (K, d)
    intercept_r: np.ndarray | None = None  # (K,)
    snr: float | None = None
    noise_mult: float = 1.0       # Temperature suite noise multiplier
    sigma_shared: bool = False    # reuse source-0 sigma for all sources
    # nonlinear component
    g_kind: str = "none"
    g_interaction_w: np.ndarray | None = None  # (4, 4), ordered pairs
    g_proj: np.ndarray | None = None           # (3, d) unit rows * magnitude
    g_a: np.ndarray | None = None              # (3,)
    g_b: np.ndarray | None = None              # (3,)


def _shift_means(rng, cfg: SuiteConfig, informative) -> np.ndarray:
    mu = np.zeros((cfg.K, cfg.d))
    if not cfg.is_shift:
        return mu
    v = np.zeros(cfg.d)
    v[informative] = rng.normal(size=NUM_INFORMATIVE)
    v /= np.linalg.norm(v)
    if cfg.K > 1:
        mu[1] = cfg.delta_x * v
    if cfg.K > 2:
        mu[2] = -cfg.delta_x * v
    return mu


def _nonlinear_params(rng, cfg: SuiteConfig, informative, kind):
    if kind == "interaction":
        w = rng.normal(scale=1.1, size=(NUM_INFORMATIVE, NUM_INFORMATIVE))
        return {"g_kind": kind, "g_interaction_w": w}
    proj = np.zeros((3, cfg.d))
    a = np.empty(3)
    b = np.empty(3)
    b_lo, b_hi = (-np.pi / 3, np.pi / 3) if kind == "sinusoid" else (-0.5, 0.5)
    a_lo, a_hi = (0.5, 1.5) if kind == "sinusoid" else (0.75, 2.0)
    for r in range(3):
        support = informative[rng.choice(NUM_INFORMATIVE, size=3,
                                         replace=False)]
        mag = rng.uniform(0.375, 0.875)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        proj[r, support] = mag * direction
        b[r] = rng.uniform(b_lo, b_hi)
        a[r] = rng.uniform(a_lo, a_hi)
    return {"g_kind": kind, "g_proj": proj, "g_a": a, "g_b": b}


def sample_hyperparams(cfg: SuiteConfig, task: TaskKind,
                       run: int = 0) -> DrawnHyperparams:
    """Draw all per-run hyperparameters from one seeded stream.

    Draw order is fixed: informative set, shift direction, task-specific
    coefficients, nonlinear unit parameters, temperature noise multiplier.
    """
    rng = stream(cfg.seed, run, TAG_HYPER)
    informative = np.sort(rng.choice(cfg.d, size=NUM_INFORMATIVE,
                                     replace=False))
    mu_x = _shift_means(rng, cfg, informative)
    K, C, d, tau = cfg.K, cfg.C, cfg.d, cfg.tau
    fields: dict = {"informative": informative, "mu_x": mu_x}

    if task.is_classification:
        base = np.zeros((C, d))
        base[:, informative] = rng.normal(size=(C, NUM_INFORMATIVE))
        if cfg.suite == "CovariateShift":
            # shared conditional law: xi = tau, common intercepts and slopes
            shared_b = rng.normal(scale=0.4 * tau, size=C)
            fields.update(
                xi=np.full(K, tau),
                intercepts_c=np.tile(shared_b, (K, 1)),
                slopes_c=np.tile(base, (K, 1, 1)))
        else:
            u = rng.uniform(-1.0, 1.0, size=K)
            b = rng.normal(scale=0.4 * tau, size=(K, C))
            delta = np.zeros((K, C, d))
            delta[:, :, informative] = rng.normal(
                scale=0.15, size=(K, C, NUM_INFORMATIVE))
            fields.update(
                xi=2.5 * (1.0 + 0.25 * tau * u),
                intercepts_c=b,
                slopes_c=base[None] + tau * delta)
    else:
        base = np.zeros(d)
        base[informative] = rng.normal(size=NUM_INFORMATIVE)
        b = rng.normal(scale=0.5)
        if cfg.suite == "CovariateShift":
            # shared conditional law and shared noise level
            fields.update(beta_r=np.tile(base, (K, 1)),
                          intercept_r=np.full(K, b),
                          sigma_shared=True)
        else:
            delta = np.zeros((K, d))
            delta[:, informative] = rng.normal(size=(K, NUM_INFORMATIVE))
            v = rng.normal(scale=0.5, size=K)
            fields.update(beta_r=base[None] + 0.2 * tau * delta,
                          intercept_r=b + tau * v)
        fields["snr"] = float(rng.uniform(5.0, 10.0))

    if cfg.suite in _NONLINEAR:
        fields.update(_nonlinear_params(rng, cfg, informative,
                                        _NONLINEAR[cfg.suite]))
    if cfg.suite == "Temperature" and not task.is_classification:
        lo = max(0.0, 1.0 - tau / 4.0)
        fields["noise_mult"] = float(rng.uniform(lo, 1.0 + tau / 4.0))
    return DrawnHyperparams(**fields)


# ---------------------------------------------------------------------------
# evaluation of the drawn model

def nonlinear_g(hp: DrawnHyperparams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if hp.g_kind == "none":
        return np.zeros(X.shape[0])
    if hp.g_kind == "interaction":
        XI = X[:, hp.informative]
        return 2.0 * np.einsum("ni,ij,nj->n", XI, hp.g_interaction_w, XI)
    Z = X @ hp.g_proj.T + hp.g_b  # (n, 3)
    if hp.g_kind == "sinusoid":
        return 2.0 * (np.sin(Z) @ hp.g_a)
    return 2.0 * (np.logaddexp(0.0, Z) @ hp.g_a)  # softplus


def class_logits(hp: DrawnHyperparams, X: np.ndarray, k: int) -> np.ndarray:
    """eta_kc(x) = xi_k (b_kc + beta_kc'x) + 1{c >= 1} g(x)."""
    X = np.asarray(X, dtype=np.float64)
    lin = hp.intercepts_c[k][None, :] + X @ hp.slopes_c[k].T
    logits = hp.xi[k] * lin
    logits[:, 1:] += nonlinear_g(hp, X)[:, None]
    return logits


def class_probs(hp: DrawnHyperparams, X: np.ndarray, k: int) -> np.ndarray:
    logits = class_logits(hp, X, k)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def reg_mean(hp: DrawnHyperparams, X: np.ndarray, k: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X @ hp.beta_r[k] + hp.intercept_r[k] + nonlinear_g(hp, X)


def _sample_features(rng, n: int, mu: np.ndarray) -> np.ndarray:
    """X = mu + sqrt(0.8) Z + sqrt(0.2) W 1  gives Sigma = 0.2 11' + 0.8 I."""
    d = mu.size
    Z = rng.normal(size=(n, d))
    W = rng.normal(size=(n, 1))
    return mu[None, :] + np.sqrt(0.8) * Z + np.sqrt(0.2) * W


# ---------------------------------------------------------------------------
# dataset generation

def generate_classification(hp: DrawnHyperparams, cfg: SuiteConfig,
                            run: int = 0) -> MultiSourceData:
    task = TaskKind.classification(cfg.C)
    sources = []
    for k in range(cfg.K):
        rng = stream(cfg.seed, run, TAG_DRAW, k)
        X = _sample_features(rng, cfg.n_per_source, hp.mu_x[k])
        P = class_probs(hp, X, k)
        u = rng.random(cfg.n_per_source)
        y = np.minimum((u[:, None] > P.cumsum(axis=1)).sum(axis=1),
                       cfg.C - 1).astype(np.uint32)
        sources.append(SourceDataset(k, X, y, task))
    return MultiSourceData(tuple(sources), task)


def regression_sigmas(hp: DrawnHyperparams, mus: list) -> np.ndarray:
    """Noise scales hitting the drawn SNR on each realized design
    (population variance of the realized mean values); the shared-noise
    suites reuse source 0's scale; Temperature multiplies by the drawn u."""
    if hp.sigma_shared:
        s0 = np.sqrt(max(np.var(mus[0]), 1e-24) / hp.snr)
        sig = np.full(len(mus), s0)
    else:
        sig = np.array([np.sqrt(max(np.var(m), 1e-24) / hp.snr)
                        for m in mus])
    return sig * hp.noise_mult


def generate_regression(hp: DrawnHyperparams, cfg: SuiteConfig,
                        run: int = 0) -> MultiSourceData:
    task = TaskKind.regression()
    rngs = [stream(cfg.seed, run, TAG_DRAW, k) for k in range(cfg.K)]
    Xs, mus = [], []
    for k in range(cfg.K):
        X = _sample_features(rngs[k], cfg.n_per_source, hp.mu_x[k])
        Xs.append(X)
        mus.append(reg_mean(hp, X, k))
    sig = regression_sigmas(hp, mus)
    sources = []
    for k in range(cfg.K):
        eps = sig[k] * rngs[k].standard_normal(cfg.n_per_source)
        sources.append(SourceDataset(k, Xs[k], mus[k] + eps, task))
    return MultiSourceData(tuple(sources), task)


def suite_dataset(cfg: SuiteConfig, task: TaskKind,
                  run: int = 0) -> tuple[MultiSourceData, DrawnHyperparams]:
    """Hyperparameters plus one dataset, a pure function of (cfg, run)."""
    hp = sample_hyperparams(cfg, task, run)
    if task.is_classification:
        return generate_classification(hp, cfg, run), hp
    return generate_regression(hp, cfg, run), hp
