"""Tests for the synthetic data-generating suites."""

import numpy as np
import pytest

from mdcp.data import TaskKind
from mdcp.dgp import (
    NUM_INFORMATIVE,
    SUITES,
    DrawnHyperparams,
    SuiteConfig,
    class_logits,
    class_probs,
    generate_regression,
    nonlinear_g,
    reg_mean,
    regression_sigmas,
    sample_hyperparams,
    suite_dataset,
)

CLS = TaskKind.classification(6)
REG = TaskKind.regression()


def _cfg(suite="Linear", **kw):
    return SuiteConfig(suite=suite, **kw)


# ---------------------------------------------------------------------------
# configuration validation

def test_unknown_suite_rejected():
    with pytest.raises(ValueError):
        _cfg(suite="Quadratic")


@pytest.mark.parametrize("kw", [
    {"tau": -0.1}, {"delta_x": -1.0}, {"K": 0}, {"C": 1},
    {"n_per_source": 0}, {"d": 3}, {"alpha": 0.0}, {"alpha": 1.0},
])
def test_bad_config_rejected(kw):
    with pytest.raises(ValueError):
        _cfg(**kw)


# ---------------------------------------------------------------------------
# hyperparameter draws

def test_informative_set_has_four_sorted_distinct_coords():
    for suite in SUITES:
        hp = sample_hyperparams(_cfg(suite=suite, delta_x=1.0), CLS, run=3)
        idx = hp.informative
        assert idx.shape == (NUM_INFORMATIVE,)
        assert np.all(np.diff(idx) > 0)
        assert idx.min() >= 0 and idx.max() < 10


def test_hyperparams_deterministic_in_config_and_run():
    cfg = _cfg(suite="NonlinearSinusoid", tau=1.5, seed=7)
    a = sample_hyperparams(cfg, REG, run=2)
    b = sample_hyperparams(cfg, REG, run=2)
    assert np.array_equal(a.beta_r, b.beta_r)
    assert np.array_equal(a.g_proj, b.g_proj)
    assert a.snr == b.snr and a.noise_mult == b.noise_mult
    c = sample_hyperparams(cfg, REG, run=3)
    assert not np.array_equal(a.beta_r, c.beta_r)


def test_coefficients_vanish_off_informative_set():
    for suite in ("Linear", "Temperature", "NonlinearSoftplus"):
        cfg = _cfg(suite=suite, tau=2.5)
        hp_c = sample_hyperparams(cfg, CLS, run=1)
        mask = np.ones(cfg.d, dtype=bool)
        mask[hp_c.informative] = False
        assert np.all(hp_c.slopes_c[:, :, mask] == 0.0)
        hp_r = sample_hyperparams(cfg, REG, run=1)
        assert np.all(hp_r.beta_r[:, mask] == 0.0)


def test_signal_strength_bounds():
    # xi_k = 2.5 (1 + 0.25 tau u_k) with u_k in [-1, 1]
    hp0 = sample_hyperparams(_cfg(tau=0.0), CLS, run=0)
    assert np.all(hp0.xi == 2.5)
    hp = sample_hyperparams(_cfg(tau=2.5), CLS, run=5)
    assert np.all(hp.xi >= 2.5 * (1 - 0.625) - 1e-12)
    assert np.all(hp.xi <= 2.5 * (1 + 0.625) + 1e-12)


def test_temperature_noise_multiplier_bounds():
    tau = 2.5
    lo, hi = 1.0 - tau / 4.0, 1.0 + tau / 4.0
    mults = [sample_hyperparams(_cfg(suite="Temperature", tau=tau), REG,
                                run=r).noise_mult for r in range(40)]
    assert all(lo <= m <= hi for m in mults)
    assert np.std(mults) > 0.05  # actually varies across runs
    # classification ignores the noise multiplier
    hp_c = sample_hyperparams(_cfg(suite="Temperature", tau=tau), CLS, run=0)
    assert hp_c.noise_mult == 1.0
    # other suites keep the default
    hp_l = sample_hyperparams(_cfg(suite="Linear", tau=tau), REG, run=0)
    assert hp_l.noise_mult == 1.0


# ---------------------------------------------------------------------------
# tau = 0 collapse: all sources share one conditional law

def test_tau_zero_classification_parameters_coincide():
    hp = sample_hyperparams(_cfg(tau=0.0, K=3), CLS, run=4)
    for k in (1, 2):
        assert np.array_equal(hp.slopes_c[k], hp.slopes_c[0])
        assert np.array_equal(hp.intercepts_c[k], hp.intercepts_c[0])
    X = np.random.default_rng(0).normal(size=(17, 10))
    p0 = class_probs(hp, X, 0)
    for k in (1, 2):
        assert np.array_equal(class_probs(hp, X, k), p0)


def test_tau_zero_regression_parameters_coincide():
    hp = sample_hyperparams(_cfg(tau=0.0, K=3), REG, run=4)
    assert np.array_equal(hp.beta_r[1], hp.beta_r[0])
    assert np.array_equal(hp.beta_r[2], hp.beta_r[0])
    assert np.all(hp.intercept_r == hp.intercept_r[0])


def test_tau_zero_class_rates_agree_across_sources():
    # identical laws: empirical per-class rates agree within 3 binomial SE
    n = 20_000
    cfg = _cfg(tau=0.0, K=3, n_per_source=n, seed=11)
    data, _hp = suite_dataset(cfg, CLS, run=0)
    rates = np.array([[np.mean(src.labels == c) for c in range(cfg.C)]
                      for src in data.sources])
    for c in range(cfg.C):
        for j in range(cfg.K):
            for k in range(j + 1, cfg.K):
                pooled = 0.5 * (rates[j, c] + rates[k, c])
                se = np.sqrt(pooled * (1 - pooled) * 2.0 / n)
                assert abs(rates[j, c] - rates[k, c]) <= 3.0 * se


# ---------------------------------------------------------------------------
# label-law sparsity: only the informative coordinates matter

@pytest.mark.parametrize("suite", ["Linear", "NonlinearInteraction",
                                   "NonlinearSinusoid", "NonlinearSoftplus"])
def test_noninformative_perturbation_leaves_logits_bit_identical(suite):
    cfg = _cfg(suite=suite, tau=2.5)
    hp = sample_hyperparams(cfg, CLS, run=2)
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, cfg.d))
    spare = next(j for j in range(cfg.d) if j not in set(hp.informative))
    X2 = X.copy()
    X2[:, spare] = rng.normal(size=50) * 100.0
    for k in range(cfg.K):
        assert np.array_equal(class_logits(hp, X2, k), class_logits(hp, X, k))


@pytest.mark.parametrize("suite", ["Linear", "NonlinearInteraction",
                                   "NonlinearSinusoid", "NonlinearSoftplus"])
def test_noninformative_perturbation_leaves_means_bit_identical(suite):
    cfg = _cfg(suite=suite, tau=2.5)
    hp = sample_hyperparams(cfg, REG, run=2)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, cfg.d))
    spare = next(j for j in range(cfg.d) if j not in set(hp.informative))
    X2 = X.copy()
    X2[:, spare] = rng.normal(size=50) * 100.0
    assert np.array_equal(nonlinear_g(hp, X2), nonlinear_g(hp, X))
    for k in range(cfg.K):
        assert np.array_equal(reg_mean(hp, X2, k), reg_mean(hp, X, k))


# ---------------------------------------------------------------------------
# conditional class probabilities

def test_class_probs_rows_normalize():
    for suite in ("Linear", "NonlinearSoftplus", "CovariateShift"):
        cfg = _cfg(suite=suite, tau=2.5, delta_x=1.0)
        hp = sample_hyperparams(cfg, CLS, run=1)
        X = np.random.default_rng(3).normal(size=(200, cfg.d)) * 3.0
        for k in range(cfg.K):
            P = class_probs(hp, X, k)
            assert np.all(P >= 0.0)
            assert np.max(np.abs(P.sum(axis=1) - 1.0)) <= 1e-12


def test_generated_labels_within_class_range():
    data, _ = suite_dataset(_cfg(tau=2.5, n_per_source=500), CLS, run=0)
    for src in data.sources:
        assert src.labels.min() >= 0 and src.labels.max() < 6


# ---------------------------------------------------------------------------
# regression noise calibration

def test_realized_snr_matches_target_within_one_percent():
    cfg = _cfg(suite="Linear", tau=2.5, n_per_source=2000, seed=5)
    hp = sample_hyperparams(cfg, REG, run=0)
    data, hp2 = suite_dataset(cfg, REG, run=0)
    assert np.array_equal(hp.beta_r, hp2.beta_r)
    mus = [reg_mean(hp, src.features, k)
           for k, src in enumerate(data.sources)]
    sig = regression_sigmas(hp, mus)
    for k in range(cfg.K):
        realized = np.var(mus[k]) / sig[k] ** 2
        assert abs(realized / hp.snr - 1.0) <= 0.01


def test_shared_noise_scale_on_covariate_shift():
    cfg = _cfg(suite="CovariateShift", delta_x=1.5, n_per_source=800)
    hp = sample_hyperparams(cfg, REG, run=0)
    assert hp.sigma_shared
    mus = [np.random.default_rng(k).normal(size=800) * (k + 1)
           for k in range(3)]
    sig = regression_sigmas(hp, mus)
    assert sig[0] == sig[1] == sig[2]
    expected = np.sqrt(np.var(mus[0]) / hp.snr)
    assert sig[0] == pytest.approx(expected, rel=1e-12)


def test_temperature_multiplier_scales_noise():
    cfg = _cfg(suite="Temperature", tau=2.5, n_per_source=400)
    hp = sample_hyperparams(cfg, REG, run=1)
    mus = [np.random.default_rng(9).normal(size=400) for _ in range(3)]
    base = regression_sigmas(
        DrawnHyperparams(informative=hp.informative, mu_x=hp.mu_x,
                         beta_r=hp.beta_r, intercept_r=hp.intercept_r,
                         snr=hp.snr, noise_mult=1.0), mus)
    sig = regression_sigmas(hp, mus)
    assert np.allclose(sig, base * hp.noise_mult, rtol=1e-12)


def test_ols_recovers_unit_slope_on_first_coordinate():
    # hand-built hyperparameters: beta = e_1, no intercept, no nonlinearity
    d, n = 10, 20_000
    beta = np.zeros(d)
    beta[0] = 1.0
    hp = DrawnHyperparams(informative=np.arange(4),
                          mu_x=np.zeros((1, d)),
                          beta_r=beta[None, :],
                          intercept_r=np.zeros(1),
                          snr=5.0)
    cfg = _cfg(suite="Linear", K=1, d=d, n_per_source=n, seed=21)
    data = generate_regression(hp, cfg, run=0)
    X, y = data.sources[0].features, data.sources[0].labels
    design = np.column_stack([X, np.ones(n)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    assert abs(coef[0] - 1.0) <= 0.05
    assert np.max(np.abs(coef[1:d])) <= 0.05


# ---------------------------------------------------------------------------
# covariate geometry

def test_shift_means_geometry():
    cfg = _cfg(suite="CovariateShift", delta_x=1.2, K=3)
    hp = sample_hyperparams(cfg, CLS, run=6)
    mu = hp.mu_x
    assert np.all(mu[0] == 0.0)
    # opposite shifts of magnitude delta_x along one informative direction
    assert np.linalg.norm(mu[1]) == pytest.approx(1.2, rel=1e-12)
    assert np.linalg.norm(mu[1] - mu[2]) == pytest.approx(2 * 1.2, rel=1e-12)
    assert np.allclose(mu[2], -mu[1])
    mask = np.ones(cfg.d, dtype=bool)
    mask[hp.informative] = False
    assert np.all(mu[1][mask] == 0.0)


def test_non_shift_suites_center_features_at_zero():
    for suite in ("Linear", "Temperature", "NonlinearSinusoid"):
        hp = sample_hyperparams(_cfg(suite=suite, tau=1.0), REG, run=0)
        assert np.all(hp.mu_x == 0.0)


def test_feature_covariance_matches_equicorrelated_target():
    n = 50_000
    cfg = _cfg(suite="Linear", K=1, n_per_source=n, seed=13)
    data, _ = suite_dataset(cfg, REG, run=0)
    X = data.sources[0].features
    target = 0.2 * np.ones((10, 10)) + 0.8 * np.eye(10)
    emp = np.cov(X, rowvar=False)
    assert np.linalg.norm(emp - target, ord="fro") <= 0.05


# ---------------------------------------------------------------------------
# dataset plumbing

def test_suite_dataset_deterministic_and_run_sensitive():
    cfg = _cfg(suite="Temperature", tau=1.5, n_per_source=300, seed=3)
    a, hp_a = suite_dataset(cfg, REG, run=1)
    b, hp_b = suite_dataset(cfg, REG, run=1)
    assert np.array_equal(hp_a.beta_r, hp_b.beta_r)
    for sa, sb in zip(a.sources, b.sources):
        assert np.array_equal(sa.features, sb.features)
        assert np.array_equal(sa.labels, sb.labels)
    c, _ = suite_dataset(cfg, REG, run=2)
    assert not np.array_equal(a.sources[0].labels, c.sources[0].labels)


def test_sources_have_requested_shape_and_task():
    cfg = _cfg(K=3, n_per_source=250, d=12)
    data, _ = suite_dataset(cfg, CLS, run=0)
    assert len(data.sources) == 3
    for k, src in enumerate(data.sources):
        assert src.source_id == k
        assert src.features.shape == (250, 12)
        assert src.task == CLS
    reg, _ = suite_dataset(cfg, REG, run=0)
    assert reg.task == REG
    assert reg.sources[0].labels.dtype == np.float64
