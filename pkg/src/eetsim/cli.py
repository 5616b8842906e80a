"""Command line entry point: ``eetsim run|compare|sweep|cost``."""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import (EXIT_COMPARISON, EXIT_CONFIG, EXIT_OK, ConfigError, ExperimentConfig,
                          OutputError, SolverError, compare_series, cost_table, ensemble_sweep,
                          run_experiment, write_cost_csv)


def _m_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad M list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eetsim", description=__doc__)
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (results do not depend on this)")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--output", help="output directory (default: $EETSIM_OUTPUT_DIR)")

    cmp_ = sub.add_parser("compare", help="compare two CSV series")
    cmp_.add_argument("a")
    cmp_.add_argument("b")
    cmp_.add_argument("--tol", type=float, required=True)

    sweep = sub.add_parser("sweep", help="ensemble deviation from HEOM versus M")
    sweep.add_argument("config")
    sweep.add_argument("--m", type=_m_list, required=True, help="comma separated, e.g. 50,100,500")
    sweep.add_argument("--seeds", type=int, default=1)
    sweep.add_argument("--output")

    cost = sub.add_parser("cost", help="hierarchy size table")
    cost.add_argument("--sites", type=int, required=True)
    cost.add_argument("--k", type=int, default=1)
    cost.add_argument("--depth", type=int, required=True, help="largest depth in the table")
    cost.add_argument("--output", help="CSV path (default: stdout)")
    return parser


def _load(args):
    cfg = ExperimentConfig.from_json(args.config)
    cfg.threads = args.threads
    if getattr(args, "output", None):
        cfg.output_dir = args.output
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            art = run_experiment(_load(args))
            print(json.dumps(art.report.to_dict(), default=float))
            return EXIT_OK if art.report.passed else EXIT_COMPARISON
        if args.verb == "compare":
            report = compare_series(args.a, args.b, args.tol)
            print(json.dumps(report.to_dict()))
            return EXIT_OK if report.passed else EXIT_COMPARISON
        if args.verb == "sweep":
            cfg = _load(args)
            cfg.kind = "ensemble_sweep"
            cfg.params["M_list"] = args.m
            cfg.params["n_seeds"] = args.seeds
            art = run_experiment(cfg)
            print(json.dumps(art.report.to_dict(), default=float))
            return EXIT_OK
        if args.verb == "cost":
            if min(args.sites, args.k, args.depth) < 0:
                raise ConfigError("sites, k and depth must be nonnegative")
            rows = cost_table(args.sites, args.k, range(args.depth + 1))
            if args.output:
                write_cost_csv(args.output, rows)
            else:
                print("depth,count,stirling_bound,stirling_lower,overflow")
                for d, c in rows:
                    print(f"{d},{c.count},{c.stirling_bound:.17g},{c.stirling_lower:.17g},{int(c.overflow)}")
            return EXIT_OK
    except (ConfigError, SolverError, OutputError) as exc:
        print(f"eetsim: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"eetsim: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG
