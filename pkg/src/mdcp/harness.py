"""Experiment harness: end-to-end Monte Carlo runs, metrics, and reports.

One run = draw (or load) a multi-source dataset, split it per source into
train / calibration / test folds, fit the shared working models once, then
evaluate every requested method on the pooled test fold:

* ``baseline-src-k``  - single-source conformal set calibrated on source k
  (classification: negated predicted probability; regression: absolute
  standardized residual, giving the symmetric interval mu +- q sigma).
* ``baseline-agg``    - union of the K per-source baseline sets (max-p over
  the per-source p-values).
* ``mdcp``            - learned shared score s = -sum_k lambda_k(x) f_k(y|x)
  with randomized per-source p-values and max-p aggregation; regression
  sets come from the label-grid scan.
* ``mdcp-tuned``      - same, with the stability penalty gamma chosen on a
  mimic split of the training fold first.

Reports: ``report.csv`` with one row per (run, method) using columns
``suite,method,run,seed,alpha,overall_cov,worst_cov,cov_src_*,mean_size,
wall_ms``; ``run_meta.json`` with configs, RNG identity, per-run test
counts and training diagnostics; ``summary.csv/json`` with mean/SD per
(method, metric). Everything except wall-clock columns is a pure function
of the config.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .conformal import (CalibrationBank, deterministic_p_matrix,
                        empirical_randomized_quantile, randomized_p_matrix)
from .data import MultiSourceData, SplitPlan, TaskKind, load_csv, pool, split
from .dgp import SuiteConfig, suite_dataset
from .dualopt import (DualTrainConfig, SharedScore, train_lambda,
                      tune_penalty, union_length_from_mask)
from .models import (BoostedTreesConfig, fit_classifier, fit_gaussian,
                     mixture_pool)
from .regsets import DEGENERATE_EPS_SCALE, build_grid
from .rng import (RNG_ALGORITHM, TAG_FIT, TAG_POOL_FIT, TAG_SPLIT_SEED,
                  TAG_TRAIN, TAG_TUNE, TAG_UNIFORMS, derive_seed, stream)

METHOD_FAMILIES = ("mdcp", "mdcp-tuned", "baseline-agg", "baseline-src-k")


def _is_src_method(name: str) -> bool:
    tail = name.rsplit("-", 1)[-1]
    return name.startswith("baseline-src-") and (tail == "k" or tail.isdigit())


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one experiment; JSON-round-trippable."""

    task_kind: str                      # "classification" | "regression"
    suite: dict | None = None           # SuiteConfig fields, or
    data_csv: str | None = None         # a CSV in the data-module format
    methods: tuple = ("mdcp", "baseline-agg", "baseline-src-k")
    num_runs: int = 1
    alpha: float = 0.1
    seed: int = 0
    num_classes: int = 6
    fractions: tuple = (0.375, 0.125, 0.5)
    models: dict = field(default_factory=dict)   # BoostedTreesConfig fields
    dual: dict = field(default_factory=dict)     # DualTrainConfig fields
    pool_mode: str = "mixture"                   # or "refit"
    baseline_randomized: bool = False
    grid_points: int = 100

    def __post_init__(self):
        if self.task_kind not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task_kind!r}")
        if (self.suite is None) == (self.data_csv is None):
            raise ValueError("exactly one of suite/data_csv must be set")
        if self.num_runs < 1:
            raise ValueError("num_runs must be >= 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        for mth in self.methods:
            if mth not in METHOD_FAMILIES and not _is_src_method(mth):
                raise ValueError(f"unknown method {mth!r}")
        if self.pool_mode not in ("mixture", "refit"):
            raise ValueError(f"unknown pool_mode {self.pool_mode!r}")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "fractions", tuple(self.fractions))
        object.__setattr__(self, "models", dict(self.models))
        object.__setattr__(self, "dual", dict(self.dual))

    @property
    def task(self) -> TaskKind:
        if self.task_kind == "classification":
            return TaskKind.classification(self.num_classes)
        return TaskKind.regression()

    def suite_config(self) -> SuiteConfig:
        d = dict(self.suite)
        d.setdefault("alpha", self.alpha)
        d.setdefault("seed", self.seed)
        return SuiteConfig(**d)

    def model_config(self) -> BoostedTreesConfig:
        return BoostedTreesConfig(**self.models)

    def dual_config(self) -> DualTrainConfig:
        d = dict(self.dual)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        if "penalty_grid" in d:
            d["penalty_grid"] = tuple(d["penalty_grid"])
        return DualTrainConfig(**d)

    def expanded_methods(self, K: int) -> tuple:
        out = []
        for mth in self.methods:
            if mth == "baseline-src-k":
                out.extend(f"baseline-src-{k}" for k in range(K))
            else:
                out.append(mth)
        return tuple(out)

    @property
    def suite_name(self) -> str:
        if self.suite is not None:
            return self.suite["suite"]
        return Path(self.data_csv).stem

    def to_dict(self) -> dict:
        return {"task_kind": self.task_kind, "suite": self.suite,
                "data_csv": self.data_csv, "methods": list(self.methods),
                "num_runs": self.num_runs, "alpha": self.alpha,
                "seed": self.seed, "num_classes": self.num_classes,
                "fractions": list(self.fractions), "models": self.models,
                "dual": self.dual, "pool_mode": self.pool_mode,
                "baseline_randomized": self.baseline_randomized,
                "grid_points": self.grid_points}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        if "fractions" in d:
            d["fractions"] = tuple(d["fractions"])
        return cls(**d)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# per-run machinery

@dataclass(frozen=True)
class _TestBlock:
    X: np.ndarray
    y: np.ndarray
    src: np.ndarray
    counts: np.ndarray

    @property
    def n(self) -> int:
        return self.y.size


def _test_block(test: MultiSourceData) -> _TestBlock:
    X = np.concatenate([s.features for s in test.sources])
    y = np.concatenate([s.labels for s in test.sources])
    src = np.concatenate([np.full(s.n, k) for k, s in
                          enumerate(test.sources)])
    counts = np.array([s.n for s in test.sources])
    return _TestBlock(X, y, src, counts)


def _metrics(cover: np.ndarray, size: np.ndarray, tb: _TestBlock,
             K: int) -> dict:
    cov_src = [float(cover[tb.src == k].mean()) for k in range(K)]
    return {"overall_cov": float(cover.mean()),
            "worst_cov": float(min(cov_src)),
            "cov_src": cov_src,
            "mean_size": float(np.mean(size))}


def _maxp_accept(banks: CalibrationBank, S: np.ndarray, u_mat, alpha,
                 randomized: bool) -> np.ndarray:
    p_max = None
    for k in range(banks.K):
        if randomized:
            p_k = randomized_p_matrix(banks, k, S, u_mat[:, k])
        else:
            p_k = deterministic_p_matrix(banks, k, S)
        p_max = p_k if p_max is None else np.maximum(p_max, p_k)
    return p_max >= alpha


def _fit_shared(cfg: ExperimentConfig, train: MultiSourceData, r: int):
    mc = cfg.model_config()
    per_source = []
    for k, src in enumerate(train.sources):
        s = derive_seed(cfg.seed, r, TAG_FIT, k)
        if cfg.task.is_classification:
            per_source.append(fit_classifier(src.features, src.labels,
                                             cfg.num_classes, mc, s))
        else:
            per_source.append(fit_gaussian(src.features, src.labels, mc, s))
    if cfg.pool_mode == "mixture":
        pooled = mixture_pool(per_source, train.weights)
    else:
        rows = pool(train)
        s = derive_seed(cfg.seed, r, TAG_POOL_FIT)
        if cfg.task.is_classification:
            pooled = fit_classifier(rows.features, rows.labels,
                                    cfg.num_classes, mc, s)
        else:
            pooled = fit_gaussian(rows.features, rows.labels, mc, s)
    return per_source, pooled


def _mdcp_eval(cfg: ExperimentConfig, score: SharedScore,
               train: MultiSourceData, calib: MultiSourceData,
               tb: _TestBlock, u_mat: np.ndarray) -> dict:
    banks = CalibrationBank.from_scores(
        [score.rows(c.features, c.labels) for c in calib.sources])
    if cfg.task.is_classification:
        S = score.matrix(tb.X)
        accept = _maxp_accept(banks, S, u_mat, cfg.alpha, True)
        cover = accept[np.arange(tb.n), tb.y.astype(np.int64)]
        size = accept.sum(axis=1).astype(np.float64)
        return _metrics(cover, size, tb, train.K)
    train_labels = np.concatenate([s.labels for s in train.sources])
    calib_labels = np.concatenate([s.labels for s in calib.sources])
    grid = build_grid(train_labels, calib_labels, cfg.grid_points)
    S = score.matrix(tb.X, grid.points)
    accept = _maxp_accept(banks, S, u_mat, cfg.alpha, True)
    if grid.degenerate:
        c = float(grid.points[0])
        eps = max(abs(c), 1.0) * DEGENERATE_EPS_SCALE
        cover = accept[:, 0] & (np.abs(tb.y - c) <= eps)
        size = np.where(accept[:, 0], 2.0 * eps, 0.0)
    else:
        near = np.abs(tb.y[:, None] - grid.points[None, :]) <= \
            grid.delta * (1 + 1e-12)
        cover = (accept & near).any(axis=1)
        size = union_length_from_mask(accept, grid.delta)
    return _metrics(cover, size, tb, train.K)


def _merged_interval_lengths(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Row-wise total length of a union of K intervals (empty: lo > hi)."""
    order = np.argsort(lo, axis=1)
    lo = np.take_along_axis(lo, order, axis=1)
    hi = np.take_along_axis(hi, order, axis=1)
    total = np.zeros(lo.shape[0])
    run_hi = np.full(lo.shape[0], -np.inf)
    for j in range(lo.shape[1]):
        seg_lo = np.maximum(lo[:, j], run_hi)
        gain = np.clip(hi[:, j] - seg_lo, 0.0, None)
        gain[lo[:, j] > hi[:, j]] = 0.0  # empty interval contributes nothing
        total += gain
        run_hi = np.maximum(run_hi, np.where(lo[:, j] > hi[:, j],
                                             -np.inf, hi[:, j]))
    return total


def _baseline_eval(cfg: ExperimentConfig, per_source, calib: MultiSourceData,
                   tb: _TestBlock, u_mat: np.ndarray) -> dict:
    """Evaluate all per-source baseline sets plus their union at once."""
    K, alpha = calib.K, cfg.alpha
    rand = cfg.baseline_randomized
    out = {}
    if cfg.task.is_classification:
        accepts = []
        for k in range(K):
            model = per_source[k]
            cal = calib.sources[k]
            bank = CalibrationBank.from_scores(
                [-model.density_rows(cal.features, cal.labels)])
            S = -model.prob_matrix(tb.X)
            if rand:
                p = randomized_p_matrix(bank, 0, S, u_mat[:, k])
            else:
                p = deterministic_p_matrix(bank, 0, S)
            accepts.append(p >= alpha)
        agg = np.zeros_like(accepts[0])
        for a in accepts:
            agg |= a
        rows_idx = np.arange(tb.n)
        y_idx = tb.y.astype(np.int64)
        for k in range(K):
            cover = accepts[k][rows_idx, y_idx]
            size = accepts[k].sum(axis=1).astype(np.float64)
            out[f"baseline-src-{k}"] = _metrics(cover, size, tb, K)
        cover = agg[rows_idx, y_idx]
        out["baseline-agg"] = _metrics(cover, agg.sum(axis=1).astype(
            np.float64), tb, K)
        return out
    # regression: symmetric intervals mu_k +- q_k sigma_k
    lo = np.empty((tb.n, K))
    hi = np.empty((tb.n, K))
    covers = []
    sizes = []
    for k in range(K):
        model = per_source[k]
        cal = calib.sources[k]
        v_cal = np.abs(cal.labels - model.mu(cal.features)) / \
            model.sigma(cal.features)
        mu_t = model.mu(tb.X)
        sig_t = model.sigma(tb.X)
        v_t = np.abs(tb.y - mu_t) / sig_t
        if rand:
            bank_neg = CalibrationBank.from_scores([-v_cal])
            q = np.array([-empirical_randomized_quantile(
                bank_neg, 0, alpha, u_mat[i, k]) for i in range(tb.n)])
            bank_v = CalibrationBank.from_scores([v_cal])
            cover = randomized_p_matrix(bank_v, 0, v_t, u_mat[:, k]) >= alpha
        else:
            nc = v_cal.size
            r = int(np.ceil(alpha * (nc + 1))) - 1
            if r <= 0:
                qs = np.inf
            elif r > nc:
                qs = -np.inf
            else:
                qs = float(np.sort(v_cal)[nc - r])
            q = np.full(tb.n, qs)
            cover = v_t <= q
        half = q * sig_t
        lo[:, k] = mu_t - half
        hi[:, k] = mu_t + half
        covers.append(cover)
        sizes.append(np.maximum(0.0, 2.0 * half))
        out[f"baseline-src-{k}"] = _metrics(cover, sizes[k], tb, K)
    agg_cover = covers[0]
    for c in covers[1:]:
        agg_cover = agg_cover | c
    agg_size = _merged_interval_lengths(lo, hi)
    out["baseline-agg"] = _metrics(agg_cover, agg_size, tb, K)
    return out


def run_one(cfg: ExperimentConfig, r: int) -> tuple[list, dict]:
    """Execute run r; returns (report rows, per-run metadata)."""
    t_shared = time.perf_counter()
    if cfg.suite is not None:
        data, _ = suite_dataset(cfg.suite_config(), cfg.task, run=r)
    else:
        data = load_csv(cfg.data_csv, cfg.task)
    plan = SplitPlan(derive_seed(cfg.seed, r, TAG_SPLIT_SEED), cfg.fractions)
    train, calib, test = split(data, plan)
    per_source, pooled = _fit_shared(cfg, train, r)
    tb = _test_block(test)
    K = train.K
    u_mat = stream(cfg.seed, r, TAG_UNIFORMS).random((tb.n, K))
    methods = cfg.expanded_methods(K)
    shared_ms = 1000.0 * (time.perf_counter() - t_shared)

    results: dict = {}
    meta: dict = {"run": r, "test_counts": tb.counts.tolist(),
                  "shared_fit_ms": shared_ms}

    if any(m.startswith("baseline") for m in methods):
        t0 = time.perf_counter()
        results.update(_baseline_eval(cfg, per_source, calib, tb, u_mat))
        ms = 1000.0 * (time.perf_counter() - t0)
        for name in list(results):
            results[name]["wall_ms"] = ms / max(
                1, sum(m.startswith("baseline") for m in methods))

    if "mdcp" in methods:
        t0 = time.perf_counter()
        rows_train = pool(train)
        model, curve = train_lambda(
            rows_train, per_source, pooled, cfg.alpha, cfg.dual_config(),
            seed=derive_seed(cfg.seed, r, TAG_TRAIN))
        score = SharedScore(model, tuple(per_source))
        results["mdcp"] = _mdcp_eval(cfg, score, train, calib, tb, u_mat)
        results["mdcp"]["wall_ms"] = 1000.0 * (time.perf_counter() - t0)
        meta["mdcp_curve"] = [float(v) for v in curve]

    if "mdcp-tuned" in methods:
        t0 = time.perf_counter()
        rows_train = pool(train)
        tune_seed = derive_seed(cfg.seed, r, TAG_TUNE)
        base = cfg.dual_config()
        gamma_star, table = tune_penalty(
            train, per_source, pooled, cfg.alpha, base, seed=tune_seed,
            grid_points=cfg.grid_points)
        cfg_star = DualTrainConfig(
            batch_size=base.batch_size, max_epochs=base.max_epochs,
            step_size=base.step_size, adam_betas=base.adam_betas,
            early_stop_patience=base.early_stop_patience,
            denom_floor=base.denom_floor, penalty_gamma=gamma_star,
            penalty_grid=base.penalty_grid)
        model, curve = train_lambda(rows_train, per_source, pooled,
                                    cfg.alpha, cfg_star, seed=tune_seed)
        score = SharedScore(model, tuple(per_source))
        results["mdcp-tuned"] = _mdcp_eval(cfg, score, train, calib, tb,
                                           u_mat)
        results["mdcp-tuned"]["wall_ms"] = 1000.0 * (time.perf_counter() - t0)
        meta["gamma_star"] = gamma_star
        meta["tuning_table"] = table
        meta["mdcp_tuned_curve"] = [float(v) for v in curve]

    rows = []
    for name in methods:
        m = results[name]
        row = {"suite": cfg.suite_name, "method": name, "run": r,
               "seed": cfg.seed, "alpha": cfg.alpha,
               "overall_cov": m["overall_cov"], "worst_cov": m["worst_cov"]}
        for k in range(K):
            row[f"cov_src_{k}"] = m["cov_src"][k]
        row["mean_size"] = m["mean_size"]
        row["wall_ms"] = m["wall_ms"]
        rows.append(row)
    return rows, meta


def _run_job(cfg_json: str, r: int):
    return run_one(ExperimentConfig.from_dict(json.loads(cfg_json)), r)


def _report_columns(K: int) -> list:
    return (["suite", "method", "run", "seed", "alpha", "overall_cov",
             "worst_cov"] + [f"cov_src_{k}" for k in range(K)]
            + ["mean_size", "wall_ms"])


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   threads: int | None = None) -> pd.DataFrame:
    """All runs; writes report.csv / run_meta.json / summary.* if out_dir."""
    threads = int(os.environ.get("MDCP_THREADS", threads or 1))
    t0 = time.perf_counter()
    if threads > 1 and cfg.num_runs > 1:
        cfg_json = json.dumps(cfg.to_dict())
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outcomes = list(ex.map(_run_job, [cfg_json] * cfg.num_runs,
                                   range(cfg.num_runs)))
    else:
        outcomes = [run_one(cfg, r) for r in range(cfg.num_runs)]
    rows = [row for (rs, _) in outcomes for row in rs]
    metas = [m for (_, m) in outcomes]
    K = len(metas[0]["test_counts"])
    report = pd.DataFrame(rows, columns=_report_columns(K))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.to_csv(out / "report.csv", index=False)
        meta = {"rng_algorithm": RNG_ALGORITHM, "config": cfg.to_dict(),
                "model_defaults": cfg.model_config().to_dict(),
                "dual_defaults": cfg.dual_config().to_dict(),
                "runs": metas,
                "total_wall_ms": 1000.0 * (time.perf_counter() - t0)}
        with open(out / "run_meta.json", "w") as fh:
            json.dump(meta, fh, indent=1)
        summary = aggregate_reports(report)
        summary.to_csv(out / "summary.csv", index=False)
        with open(out / "summary.json", "w") as fh:
            json.dump(summary.to_dict(orient="records"), fh, indent=1)
    return report


def aggregate_reports(report: pd.DataFrame) -> pd.DataFrame:
    """Long-format mean/SD per (method, metric); sample SD, 0 for one run."""
    if len(report) == 0:
        raise ValueError("no report rows to aggregate")
    metrics = [c for c in report.columns
               if c not in ("suite", "method", "run", "seed", "alpha",
                            "wall_ms")]
    out = []
    for method, grp in report.groupby("method", sort=False):
        for metric in metrics:
            vals = grp[metric].to_numpy(dtype=np.float64)
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            out.append({"method": method, "metric": metric,
                        "mean": float(vals.mean()), "sd": sd,
                        "n_runs": int(vals.size)})
    return pd.DataFrame(out, columns=["method", "metric", "mean", "sd",
                                      "n_runs"])


def verify_report(report_dir: str) -> dict:
    """Re-check metric identities of an emitted report; never raises."""
    out = Path(report_dir)
    checks = {}

    def check(name, ok, detail=""):
        checks[name] = {"ok": bool(ok), "detail": detail}

    try:
        report = pd.read_csv(out / "report.csv")
        with open(out / "run_meta.json") as fh:
            meta = json.load(fh)
    except Exception as e:  # missing/corrupt artifacts
        return {"ok": False, "checks": {"artifacts_readable": {
            "ok": False, "detail": str(e)}}}
    check("artifacts_readable", True)
    cov_cols = [c for c in report.columns if c.startswith("cov_src_")]
    counts = {m["run"]: np.asarray(m["test_counts"], dtype=np.float64)
              for m in meta["runs"]}
    worst_ok, overall_ok, range_ok = True, True, True
    for _, row in report.iterrows():
        src = row[cov_cols].to_numpy(dtype=np.float64)
        if abs(row["worst_cov"] - src.min()) > 1e-9:
            worst_ok = False
        w = counts[int(row["run"])]
        if abs(row["overall_cov"] - float(src @ w / w.sum())) > 1e-9:
            overall_ok = False
        rates = np.concatenate([src, [row["overall_cov"], row["worst_cov"]]])
        if rates.min() < -1e-12 or rates.max() > 1 + 1e-12:
            range_ok = False
    check("worst_is_min_of_sources", worst_ok)
    check("overall_is_count_weighted_mean", overall_ok)
    check("rates_in_unit_interval", range_ok)
    check("alpha_constant",
          report["alpha"].nunique() == 1
          and float(report["alpha"].iloc[0]) == meta["config"]["alpha"])
    check("rng_recorded", meta.get("rng_algorithm") == RNG_ALGORITHM)
    return {"ok": all(c["ok"] for c in checks.values()), "checks": checks}
