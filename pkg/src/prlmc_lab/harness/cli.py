"""Command-line entry point: ``prlmc-lab <experiment> --config PATH``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import EXPERIMENTS, ConfigError, load_config, with_overrides
from .experiments import run_experiment
from .report import EXIT_CONFIG

THREADS_ENV = "PRLMC_LAB_THREADS"

log = logging.getLogger("prlmc_lab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prlmc-lab",
        description="Run a Langevin sampler verification experiment from a JSON config.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    parser.add_argument("-q", "--quiet", action="store_true", help="only print the overall status")
    return parser


def resolve_threads(flag) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        cfg = with_overrides(load_config(args.config), seed=args.seed, output=args.out)
        if cfg.experiment != args.experiment:
            raise ConfigError(
                f"config is for {cfg.experiment!r} but {args.experiment!r} was requested")
        threads = resolve_threads(args.threads)
        report = run_experiment(cfg, threads=threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    target = report.write(cfg.output)
    if not args.quiet:
        for line in report.lines():
            print(line)
    print(f"{report.experiment}: {report.status} -> {target}")
    return report.exit_code()


if __name__ == "__main__":
    sys.exit(main())
