"""Command-line interface.

    mdcp run    --config cfg.json --out DIR [--runs N] [--seed S]
                [--methods m1,m2] [--threads T]
    mdcp oracle --instance inst.json [--marginal] [--out cert.json]
    mdcp verify --report DIR

``MDCP_THREADS`` overrides ``--threads``.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness, oracle


def _cmd_run(args) -> int:
    cfg = harness.ExperimentConfig.from_json(args.config)
    overrides = {}
    if args.runs is not None:
        overrides["num_runs"] = args.runs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.methods is not None:
        overrides["methods"] = tuple(m.strip()
                                     for m in args.methods.split(","))
    if overrides:
        cfg = harness.ExperimentConfig.from_dict(
            {**cfg.to_dict(), **overrides})
    report = harness.run_experiment(cfg, out_dir=args.out,
                                    threads=args.threads)
    summary = harness.aggregate_reports(report)
    main_rows = summary[summary["metric"].isin(
        ["overall_cov", "worst_cov", "mean_size"])]
    print(main_rows.to_string(index=False))
    print(f"report written to {args.out}")
    return 0


def _cmd_oracle(args) -> int:
    inst = oracle.DiscreteInstance.from_json(args.instance)
    if args.marginal:
        cert = oracle.solve_marginal_dual(inst)
    else:
        cert = oracle.solve_cond_dual(inst)
    report = oracle.verify_certificate(inst, cert)
    payload = {"certificate": cert.to_dict(), "verify": report.to_dict()}
    text = json.dumps(payload, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text)
    return 0 if report.ok else 1


def _cmd_verify(args) -> int:
    result = harness.verify_report(args.report)
    for name, c in result["checks"].items():
        status = "PASS" if c["ok"] else "FAIL"
        detail = f"  ({c['detail']})" if c.get("detail") else ""
        print(f"[{status}] {name}{detail}")
    return 0 if result["ok"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mdcp",
        description="multi-distribution conformal prediction toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run an experiment config")
    pr.add_argument("--config", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--runs", type=int, default=None)
    pr.add_argument("--seed", type=int, default=None)
    pr.add_argument("--methods", default=None,
                    help="comma-separated method list override")
    pr.add_argument("--threads", type=int, default=None)
    pr.set_defaults(func=_cmd_run)

    po = sub.add_parser("oracle", help="solve a discrete instance exactly")
    po.add_argument("--instance", required=True)
    po.add_argument("--marginal", action="store_true",
                    help="solve the covariate-grid marginal dual")
    po.add_argument("--out", default=None)
    po.set_defaults(func=_cmd_oracle)

    pv = sub.add_parser("verify", help="re-check a report's metric identities")
    pv.add_argument("--report", required=True)
    pv.set_defaults(func=_cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
