#!/usr/bin/env python3
"""Run simulation suites from config files and print headline comparisons.

Usage:
    python scripts/run_suite.py                      # both Linear suites, quick
    python scripts/run_suite.py --runs 30            # full experiment scale
    python scripts/run_suite.py --configs configs/classification_temperature.json
    python scripts/run_suite.py --out-root reports   # also write report dirs

For every config this prints per-method worst-source coverage and mean
set size (classification: expected set cardinality; regression: interval
width), and the size ratio of each method against ``baseline-agg`` when
that baseline is present.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from mdcp.harness import ExperimentConfig, aggregate_reports, run_experiment

DEFAULT_CONFIGS = [
    ROOT / "configs" / "classification_linear.json",
    ROOT / "configs" / "regression_linear.json",
]


def run_config(path: Path, runs: int | None, out_root: Path | None,
               threads: int | None) -> None:
    cfg = ExperimentConfig.from_json(str(path))
    if runs is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "num_runs": runs})
    out_dir = None
    if out_root is not None:
        out_dir = str(out_root / path.stem)
    t0 = time.perf_counter()
    report = run_experiment(cfg, out_dir=out_dir, threads=threads)
    elapsed = time.perf_counter() - t0
    summary = aggregate_reports(report)

    wide = summary.pivot(index="method", columns="metric",
                         values="mean")[["worst_cov", "overall_cov",
                                         "mean_size"]]
    print(f"\n=== {path.name}  ({cfg.task_kind}, suite={cfg.suite_name}, "
          f"runs={cfg.num_runs}, alpha={cfg.alpha})  [{elapsed:.0f}s]")
    print(wide.round(4).to_string())
    if "baseline-agg" in wide.index:
        agg = wide.loc["baseline-agg", "mean_size"]
        for m in wide.index:
            if m != "baseline-agg":
                print(f"size ratio {m} / baseline-agg: "
                      f"{wide.loc[m, 'mean_size'] / agg:.4f}")
    if out_dir is not None:
        print(f"report written to {out_dir}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs", nargs="+", type=Path,
                    default=DEFAULT_CONFIGS,
                    help="experiment config files (default: Linear suites)")
    ap.add_argument("--runs", type=int, default=3,
                    help="override num_runs; pass 0 to keep the config value")
    ap.add_argument("--out-root", type=Path, default=None,
                    help="write report.csv/run_meta.json under this directory")
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args(argv)
    runs = None if args.runs == 0 else args.runs
    for path in args.configs:
        run_config(path, runs, args.out_root, args.threads)
    return 0


if __name__ == "__main__":
    sys.exit(main())
