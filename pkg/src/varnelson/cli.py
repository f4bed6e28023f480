"""Command line entry point ``varnelson``.

Exit codes: 0 success (all checks pass), 1 an asserted bound failed,
2 invalid configuration, 3 solver non-convergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config, validate
from .eigensolver import ConvergenceError
from .grid import HypothesisError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
COMMANDS = ("groundstate", "ir-sweep", "convergence", "verify", "ionization", "plot")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config file (sectioned key = value)")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override solver.seed")
    common.add_argument("--workers", type=int, default=1, help="size of the worker pool")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="varnelson", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS[:-1]:
        sub.add_parser(name, parents=[common])
    plot = sub.add_parser("plot", parents=[common], help="convert a result CSV into gnuplot data + script")
    plot.add_argument("csv", type=Path, help="CSV written by another subcommand")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else validate(ExperimentConfig())
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def run(args) -> int:
    from . import experiments as ex

    if args.command == "plot":
        dat, gp = ex.write_plot(args.csv, args.out)
        print(f"wrote {dat} and {gp}")
        return EXIT_OK
    cfg = _config(args)
    if args.workers < 1:
        raise ConfigError("--workers", "must be >= 1")
    status = EXIT_OK
    if args.command == "groundstate":
        tables = [ex.run_groundstate(cfg)]
    elif args.command == "ir-sweep":
        tables = [ex.run_ir_sweep(cfg, workers=args.workers)]
    elif args.command == "convergence":
        t = ex.run_convergence(cfg, workers=args.workers)
        if t.provenance.get("variational_monotone") is False:
            status = EXIT_FAIL
        tables = [t]
    elif args.command == "ionization":
        tables = [ex.run_ionization(cfg)]
    else:
        summary, per_check = ex.run_verify(cfg, workers=args.workers)
        for line in summary.column("summary"):
            print(line)
        if not summary.provenance["all_passed"]:
            status = EXIT_FAIL
        tables = [summary, *per_check.values()]
    for t in tables:
        print(f"wrote {t.write(args.out)}")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return run(args)
    except (ConfigError, HypothesisError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
