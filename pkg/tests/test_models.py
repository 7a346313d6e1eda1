import math

import numpy as np
import pytest

from mdcp.data import TaskKind
from mdcp.dgp import SuiteConfig, suite_dataset
from mdcp.errors import ClassOutOfRange, DegenerateLabels, TooFewSamples
from mdcp.models import (
    BoostedTreesConfig,
    calibrate_classifier,
    GaussianWorkingModel,
    _fit_regressor,
    _Tree,
    _TreeEnsemble,
    contiguous_folds,
    fit_classifier,
    fit_gaussian,
    load_model,
    mixture_pool,
    model_from_dict,
    save_model,
)

FAST = BoostedTreesConfig(num_rounds=40)


def leaf_ensemble(value: float) -> _TreeEnsemble:
    tree = _Tree(np.array([-1]), np.array([-1]), np.array([-2]),
                 np.array([0.0]), np.array([float(value)]))
    return _TreeEnsemble(stages=((tree,),), learning_rate=1.0)


def fixed_gaussian(mu: float, sigma: float) -> GaussianWorkingModel:
    from mdcp.models import LOGVAR_DEBIAS
    return GaussianWorkingModel(
        mean_ensemble=leaf_ensemble(mu),
        logvar_ensemble=leaf_ensemble(2.0 * math.log(sigma) - LOGVAR_DEBIAS),
        config=BoostedTreesConfig(), folds=2, fold_bounds=((0, 1), (1, 2)),
        oof_residuals=np.zeros(2))


# ---------------------------------------------------------------------------
# Gaussian density: pinned values

def test_density_standard_normal_mode():
    m = fixed_gaussian(0.0, 1.0)
    got = m.density_rows(np.zeros((1, 1)), np.array([0.0]))
    assert got[0] == pytest.approx(0.3989423, abs=5e-8)


def test_density_mu1_sigma2():
    m = fixed_gaussian(1.0, 2.0)
    got = m.density_rows(np.zeros((1, 1)), np.array([1.0]))
    assert got[0] == pytest.approx(0.1994711, abs=5e-8)


def test_density_tail_positive():
    m = fixed_gaussian(0.0, 1.0)
    got = m.density_rows(np.zeros((1, 1)), np.array([10.0]))
    assert 0.0 < got[0] < 1e-20


# ---------------------------------------------------------------------------
# classifier fits

def _slab_data(rng, n=200):
    X = rng.uniform(-3, 3, size=(n, 1))
    y = (X[:, 0] > 0).astype(np.uint32)
    return X, y


def test_classifier_separable_slab(rng):
    X, y = _slab_data(rng)
    model = fit_classifier(X, y, 2, FAST, seed=0)
    probs = model.prob_matrix(np.array([[2.0], [-2.0]]))
    assert probs[0, 1] > 0.9 and probs[1, 0] > 0.9
    Xh, yh = _slab_data(rng, n=400)
    acc = (model.prob_matrix(Xh).argmax(axis=1) == yh).mean()
    assert acc > 0.95


def test_classifier_constant_features_matches_class_balance(rng):
    X = np.zeros((200, 2))
    y = np.array([0, 1] * 100, dtype=np.uint32)
    model = fit_classifier(X, y, 2, FAST, seed=0)
    probs = model.prob_matrix(rng.standard_normal((50, 2)))
    assert np.all(np.abs(probs - 0.5) <= 0.05)


def test_classifier_beats_uniform_log_loss():
    cfg = SuiteConfig(suite="Linear", tau=0.0, C=3, n_per_source=600, seed=3)
    data, _ = suite_dataset(cfg, TaskKind.classification(3), run=0)
    src = data.source(0)
    model = fit_classifier(src.features[:400], src.labels[:400], 3, FAST, 1)
    probs = model.prob_matrix(src.features[400:])
    truth = probs[np.arange(200), src.labels[400:].astype(int)]
    log_loss = -np.mean(np.log(truth))
    assert log_loss <= math.log(3)


def test_classifier_rejects_degenerate_labels():
    X = np.zeros((10, 1))
    with pytest.raises(DegenerateLabels):
        fit_classifier(X, np.zeros(10, np.uint32), 3, FAST, 0)
    with pytest.raises(DegenerateLabels):
        fit_classifier(X, np.array([0, 5] * 5, np.uint32), 3, FAST, 0)


def test_classifier_normalization_1000_points(rng):
    X, y = _slab_data(rng, n=150)
    model = fit_classifier(X, y, 2, FAST, seed=2)
    probs = model.prob_matrix(rng.standard_normal((1000, 1)) * 4)
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) <= 1e-9)
    assert np.all(probs >= 0)


def test_classifier_absent_class_nonnegative_never_nan(rng):
    # fit with labels {0, 2} inside num_classes=4: classes 1 and 3 unseen
    X = rng.standard_normal((100, 1))
    y = np.where(X[:, 0] > 0, 2, 0).astype(np.uint32)
    model = fit_classifier(X, y, 4, FAST, seed=0)
    probs = model.prob_matrix(rng.standard_normal((30, 1)))
    assert np.isfinite(probs).all() and np.all(probs >= 0)
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) <= 1e-9)


def test_class_prob_out_of_range(rng):
    X, y = _slab_data(rng, n=60)
    model = fit_classifier(X, y, 2, FAST, seed=0)
    with pytest.raises(ClassOutOfRange):
        model.density_rows(np.zeros((1, 1)), np.array([2]))


def test_classifier_predictions_pure(rng):
    X, y = _slab_data(rng, n=80)
    model = fit_classifier(X, y, 2, FAST, seed=0)
    q = rng.standard_normal((5, 1))
    assert np.array_equal(model.prob_matrix(q), model.prob_matrix(q))


def test_classifier_matches_sklearn_probabilities(rng):
    from sklearn.ensemble import GradientBoostingClassifier
    X = rng.standard_normal((300, 3))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int) + (X[:, 2] > 1).astype(int)
    model = fit_classifier(X, y.astype(np.uint32), 3, FAST, seed=9)
    ref = GradientBoostingClassifier(
        n_estimators=FAST.num_rounds, max_depth=FAST.max_depth,
        learning_rate=FAST.learning_rate, min_samples_leaf=FAST.min_leaf_size,
        init="zero", random_state=9)
    ref.fit(X, y)
    q = rng.standard_normal((40, 3))
    ours = model.prob_matrix(q)
    theirs = ref.predict_proba(q)
    assert np.allclose(ours, theirs, atol=1e-9)


# ---------------------------------------------------------------------------
# Gaussian working model fits

def test_gaussian_linear_fit_recovers_scale(rng):
    X = rng.uniform(-2, 2, size=(2000, 1))
    y = 2.0 * X[:, 0] + rng.standard_normal(2000)
    model = fit_gaussian(X, y, FAST, seed=0)
    x0 = np.zeros((1, 1))
    assert -0.15 <= model.mu(x0)[0] <= 0.15
    assert 0.8 <= model.sigma(x0)[0] <= 1.2


def test_gaussian_constant_labels_floor_engages(rng):
    X = rng.standard_normal((60, 2))
    y = np.full(60, 3.5)
    model = fit_gaussian(X, y, BoostedTreesConfig(), seed=0)
    assert np.all(model.sigma(rng.standard_normal((20, 2))) == 1e-3)


def test_gaussian_heteroskedastic_monotone(rng):
    X = rng.uniform(-3, 3, size=(2000, 1))
    y = rng.standard_normal(2000) * (1.0 + np.abs(X[:, 0]))
    model = fit_gaussian(X, y, FAST, seed=0)
    s = model.sigma(np.array([[0.0], [2.0]]))
    assert s[1] > s[0]


def test_gaussian_too_few_samples():
    with pytest.raises(TooFewSamples):
        fit_gaussian(np.zeros((9, 1)), np.zeros(9), FAST, seed=0, folds=5)


def test_gaussian_oof_discipline_exact_reconstruction(rng):
    # independently rebuild every out-of-fold residual and the variance-model
    # training targets; they must match the fitted model bit-for-bit
    X = rng.standard_normal((120, 2))
    y = X[:, 0] + 0.5 * rng.standard_normal(120)
    model = fit_gaussian(X, y, FAST, seed=4, folds=5)
    n = y.size
    blocks = contiguous_folds(n, 5)
    assert [tuple(b[[0, -1]] + [0, 1]) for b in blocks] == \
        [tuple(b) for b in model.fold_bounds]
    oof = np.empty(n)
    for block in blocks:
        rest = np.setdiff1d(np.arange(n), block)
        fold_model = _fit_regressor(X[rest], y[rest], FAST, 4)
        oof[block] = y[block] - fold_model.raw(X[block])
    assert np.array_equal(oof, model.oof_residuals)
    targets = np.log(np.maximum(oof * oof, 1e-40))
    logvar = _fit_regressor(X, targets, FAST, 4)
    probe = rng.standard_normal((25, 2))
    assert np.array_equal(logvar.raw(probe), model.logvar_ensemble.raw(probe))


def test_gaussian_density_grid_matches_rows(rng):
    X = rng.standard_normal((200, 1))
    y = X[:, 0] + rng.standard_normal(200)
    model = fit_gaussian(X, y, FAST, seed=1)
    q = rng.standard_normal((6, 1))
    ys = np.linspace(-2, 2, 5)
    grid = model.density_grid(q, ys)
    for j, yy in enumerate(ys):
        rows = model.density_rows(q, np.full(6, yy))
        assert np.array_equal(grid[:, j], rows)


# ---------------------------------------------------------------------------
# mixture pooling

def test_mixture_is_weighted_average(rng):
    X, y = _slab_data(rng, n=150)
    m1 = fit_classifier(X, y, 2, FAST, seed=0)
    m2 = fit_classifier(X[::-1], y[::-1], 2, FAST, seed=1)
    mix = mixture_pool([m1, m2], [0.25, 0.75])
    q = rng.standard_normal((30, 1))
    want = 0.25 * m1.prob_matrix(q) + 0.75 * m2.prob_matrix(q)
    got = mix.prob_matrix(q)
    assert np.allclose(got, want, atol=1e-12)
    assert np.all(np.abs(got.sum(axis=1) - 1.0) <= 1e-9)


def test_mixture_density_rows_regression(rng):
    X = rng.standard_normal((100, 1))
    y = X[:, 0] + rng.standard_normal(100)
    g1 = fit_gaussian(X, y, FAST, seed=0)
    g2 = fit_gaussian(X, 2 * y, FAST, seed=1)
    mix = mixture_pool([g1, g2], [0.5, 0.5])
    q = rng.standard_normal((10, 1))
    yy = rng.standard_normal(10)
    want = 0.5 * g1.density_rows(q, yy) + 0.5 * g2.density_rows(q, yy)
    assert np.allclose(mix.density_rows(q, yy), want, atol=1e-15)


# ---------------------------------------------------------------------------
# JSON persistence

def test_classifier_json_round_trip_exact(tmp_path, rng):
    X, y = _slab_data(rng, n=120)
    model = fit_classifier(X, y, 2, FAST, seed=5)
    path = str(tmp_path / "clf.json")
    save_model(model, path)
    back = load_model(path)
    q = rng.standard_normal((40, 1)) * 3
    assert np.array_equal(model.prob_matrix(q), back.prob_matrix(q))


def test_gaussian_json_round_trip_exact(tmp_path, rng):
    X = rng.standard_normal((80, 2))
    y = X[:, 0] + rng.standard_normal(80)
    model = fit_gaussian(X, y, FAST, seed=5)
    path = str(tmp_path / "g.json")
    save_model(model, path)
    back = load_model(path)
    q = rng.standard_normal((20, 2))
    assert np.array_equal(model.mu(q), back.mu(q))
    assert np.array_equal(model.sigma(q), back.sigma(q))


def test_mixture_json_round_trip_exact(tmp_path, rng):
    X, y = _slab_data(rng, n=100)
    mix = mixture_pool([fit_classifier(X, y, 2, FAST, seed=0),
                        fit_classifier(X, y, 2, FAST, seed=1)], [0.4, 0.6])
    path = str(tmp_path / "mix.json")
    save_model(mix, path)
    back = load_model(path)
    q = rng.standard_normal((15, 1))
    assert np.array_equal(mix.prob_matrix(q), back.prob_matrix(q))


def test_model_version_field_enforced(rng):
    X, y = _slab_data(rng, n=60)
    d = fit_classifier(X, y, 2, FAST, seed=0).to_dict()
    assert d["version"] == 1
    d["version"] = 99
    with pytest.raises(ValueError):
        model_from_dict(d)
    d.pop("version")
    with pytest.raises(ValueError):
        model_from_dict(d)


def test_boosted_config_round_trip():
    cfg = BoostedTreesConfig(num_rounds=7, max_depth=2, learning_rate=0.5,
                             min_leaf_size=3)
    assert BoostedTreesConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        BoostedTreesConfig(num_rounds=0)
    with pytest.raises(ValueError):
        BoostedTreesConfig(learning_rate=1.5)


# ---------------------------------------------------------------------------
# optional post-fit probability calibration

def _soft_label_data(rng, n):
    X = rng.uniform(-3, 3, size=(n, 1))
    p1 = 1.0 / (1.0 + np.exp(-1.5 * X[:, 0]))
    y = (rng.random(n) < p1).astype(np.uint32)
    return X, y


def test_calibrated_probs_positive_and_normalized(rng):
    X, y = _soft_label_data(rng, 300)
    base = fit_classifier(X, y, 3, FAST, seed=3)  # class 2 never observed
    cal = calibrate_classifier(base, X, y, folds=4, seed=3)
    P = cal.prob_matrix(rng.uniform(-3, 3, size=(200, 1)))
    assert np.all(P > 0)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_calibration_does_not_hurt_brier(rng):
    # deep, long fit on soft labels -> overconfident base probabilities
    X, y = _soft_label_data(rng, 800)
    deep = BoostedTreesConfig(num_rounds=150, max_depth=4)
    base = fit_classifier(X, y, 2, deep, seed=1)
    cal = calibrate_classifier(base, X, y, folds=5, seed=1)
    Xt, yt = _soft_label_data(rng, 4000)

    def brier(model):
        p = model.prob_matrix(Xt)[:, 1]
        return float(np.mean((p - yt) ** 2))

    assert brier(cal) <= brier(base) + 1e-3


def test_calibrated_json_round_trip_exact(tmp_path, rng):
    X, y = _soft_label_data(rng, 240)
    base = fit_classifier(X, y, 2, FAST, seed=7)
    cal = calibrate_classifier(base, X, y, folds=3, seed=7)
    path = str(tmp_path / "cal.json")
    save_model(cal, path)
    back = load_model(path)
    q = rng.uniform(-3, 3, size=(60, 1))
    assert np.array_equal(cal.prob_matrix(q), back.prob_matrix(q))


def test_calibration_needs_enough_rows_per_fold(rng):
    X, y = _soft_label_data(rng, 40)
    base = fit_classifier(X, y, 2, FAST, seed=0)
    with pytest.raises(TooFewSamples):
        calibrate_classifier(base, X[:6], y[:6], folds=5)
