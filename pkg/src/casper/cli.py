"""Command-line entry point: ``casper {simulate,fit,eval,bench,ingest-check}``.

Exit codes: 0 success, 2 input error, 3 usage error, 4 training divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    MECHANISMS,
    ExperimentSpec,
    _plain,
    cmd_bench,
    cmd_simulate,
    fit_method,
    ingest_csv,
    method_config,
    read_config,
    write_result,
)
from .graph import load_adjacency
from .learner import METHODS, TrainingError
from .metrics import evaluate
from .sem import ParseError

EXIT_OK, EXIT_INPUT, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("casper")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _method_list(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"unknown method {', '.join(bad) or text!r}; choose from {', '.join(METHODS)}")
    return methods


def _add_experiment_flags(p):
    p.add_argument("--config", help="INI file; command-line flags override its values")
    p.add_argument("--graph", type=str.upper, choices=["ER", "SF"])
    p.add_argument("--degree", type=float, help="expected edges per node (ER) or attachments per node (SF)")
    p.add_argument("--nodes", type=int, dest="d")
    p.add_argument("--samples", type=int, dest="n")
    p.add_argument("--mechanism", choices=MECHANISMS)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-mean", type=_float_list, dest="noise_means", help="comma-separated list")
    p.add_argument("--degree-sweep", type=_float_list, dest="degrees", help="comma-separated list")
    p.add_argument("--out")


def _add_learner_flags(p):
    p.add_argument("--omega", type=float, help="pruning threshold")
    p.add_argument("--lambda1", type=float, help="L1 coefficient (all methods)")
    p.add_argument("--k-inner", type=int, dest="k_inner", help="critic steps per outer step")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="casper", description="DAG structure learning benchmarks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write synthetic datasets and truth graphs")
    _add_experiment_flags(p)

    p = sub.add_parser("fit", help="fit one dataset")
    p.add_argument("data", help="CSV with a header row")
    p.add_argument("--method", required=True, type=_method_list)
    p.add_argument("--config", help="INI file with [casper] / [lagrangian] sections")
    p.add_argument("--mechanism", choices=MECHANISMS, default="linear", help="gp selects the MLP model for casper")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="fit_out")
    p.add_argument("--no-standardize", action="store_true")
    _add_learner_flags(p)

    p = sub.add_parser("eval", help="score an estimated graph against the truth")
    p.add_argument("truth")
    p.add_argument("estimate")
    p.add_argument("--out", help="also write the report to this JSON file")

    p = sub.add_parser("bench", help="simulate, fit and evaluate over trials and sweeps")
    _add_experiment_flags(p)
    p.add_argument("--method", type=_method_list, dest="methods", help="comma-separated list")
    p.add_argument("--jobs", type=int)
    _add_learner_flags(p)

    p = sub.add_parser("ingest-check", help="parse a real-data CSV and summarise it")
    p.add_argument("data")
    p.add_argument("--no-standardize", action="store_true")
    return parser


def _learner_overrides(args, base: dict) -> dict:
    over = dict(base)
    for key in ("omega", "lambda1", "k_inner"):
        value = getattr(args, key, None)
        if value is not None:
            over[key] = value
    return over


def _experiment(args) -> tuple[ExperimentSpec, int]:
    exp, over = read_config(args.config) if args.config else ({}, {})
    jobs = exp.pop("jobs", 1)
    for key in ("graph", "degree", "d", "n", "mechanism", "trials", "seed", "noise_means", "degrees", "out", "methods"):
        value = getattr(args, key, None)
        if value is not None:
            exp[key] = value
    if getattr(args, "jobs", None) is not None:
        jobs = args.jobs
    exp["overrides"] = _learner_overrides(args, over)
    if "methods" in exp:
        bad = [m for m in exp["methods"] if m not in METHODS]
        if bad:
            raise UsageError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return ExperimentSpec(**exp), jobs


def _run(args) -> int:
    if args.command == "simulate":
        spec, _ = _experiment(args)
        out = cmd_simulate(spec)
        print(f"wrote {len(spec.sweep()) * spec.trials} datasets to {out}")
        return EXIT_OK

    if args.command == "bench":
        spec, jobs = _experiment(args)
        cmd_bench(spec, jobs)
        print((Path(spec.out) / "aggregate.txt").read_text(), end="")
        return EXIT_OK

    if args.command == "fit":
        if len(args.method) != 1:
            raise UsageError("fit takes exactly one method")
        method = args.method[0]
        over = read_config(args.config)[1] if args.config else {}
        config = method_config(method, args.mechanism, _learner_overrides(args, over), args.seed)
        data = ingest_csv(args.data, standardize=not args.no_standardize)
        try:
            result = fit_method(method, data, config)
        except TrainingError as exc:
            if exc.result is not None:
                write_result(args.out, exc.result)
            print(f"casper: training diverged: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        write_result(args.out, result)
        summary = {"method": method, "edges": int(result.pruned.sum()), "converged": result.converged, "out": args.out}
        print(json.dumps(summary))
        return EXIT_OK

    if args.command == "eval":
        truth = load_adjacency(args.truth)
        estimate = load_adjacency(args.estimate)
        report = evaluate(truth, estimate)
        if report.sid is None:
            print("casper: warning: estimated graph is cyclic, SID not reported", file=sys.stderr)
        text = json.dumps(report.to_dict())
        if args.out:
            Path(args.out).write_text(text + "\n")
        print(text)
        return EXIT_OK

    if args.command == "ingest-check":
        data = ingest_csv(args.data, standardize=not args.no_standardize)
        summary = {
            "n": data.n,
            "d": data.d,
            "names": list(data.names),
            "standardized": not args.no_standardize,
            "mean": data.values.mean(axis=0).tolist(),
            "std": data.values.std(axis=0).tolist(),
        }
        print(json.dumps(_plain(summary)))
        return EXIT_OK
    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"casper: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"casper: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"casper: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
