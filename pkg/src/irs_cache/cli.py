"""Command line entry point: ``irs-cache run | verify | placement``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .cache import backhaul_cost, make_placement
from .harness import (
    ExperimentConfig, emit_results, load_experiment_config, load_results, run_experiment, verify_results,
)


def _cmd_run(args) -> int:
    cfg = load_experiment_config(args.config) if args.config else ExperimentConfig()
    records = run_experiment(cfg, parallel=args.parallel)
    emit_results(records, args.format, args.out)
    failed = [r for r in records if not r.feasible]
    for r in failed:
        logging.warning("record %s failed%s", r.key, f": {r.error}" if r.error else "")
    print(f"wrote {len(records)} records to {args.out} ({len(failed)} failed)")
    return 2 if failed else 0


def _cmd_verify(args) -> int:
    cfg = load_experiment_config(args.config) if args.config else ExperimentConfig()
    records = load_results(args.results)
    outcomes = verify_results(records, cfg, n_samples=args.samples, tol=args.tol)
    bad = 0
    for o in outcomes:
        print(f"{o.key}\tmin_rate={o.min_rate:.6f}\tviolations={o.violations}\t{'ok' if o.ok else 'FAIL'}")
        bad += not o.ok
    return 2 if bad else 0


def _cmd_placement(args) -> int:
    p = make_placement(args.files, args.zipf, args.storage, args.scheme)
    cost = backhaul_cost(p.placement, p.popularity, 1.0, 1)
    np.set_printoptions(precision=6, suppress=True)
    print(f"miss probability: {p.miss_probability():.12g}")
    print(f"backhaul cost per unit rate: {cost:.12g}")
    print("placement:", p.placement)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irs-cache", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment sweep")
    run.add_argument("--config", help="flat key = value experiment file (defaults when omitted)")
    run.add_argument("--out", required=True)
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--parallel", type=int, default=1, help="worker processes")
    run.set_defaults(func=_cmd_run)

    ver = sub.add_parser("verify", help="re-certify designs stored next to a results file")
    ver.add_argument("results")
    ver.add_argument("--config", help="experiment file used for the run")
    ver.add_argument("--samples", type=int, default=None)
    ver.add_argument("--tol", type=float, default=1e-3, help="rate tolerance in bit/s/Hz")
    ver.set_defaults(func=_cmd_verify)

    pl = sub.add_parser("placement", help="solve the content placement problem")
    pl.add_argument("--files", type=int, default=200)
    pl.add_argument("--storage", type=float, default=100.0)
    pl.add_argument("--zipf", type=float, default=1.0)
    pl.add_argument("--scheme", choices=("OC", "UC"), default="OC")
    pl.set_defaults(func=_cmd_placement)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
