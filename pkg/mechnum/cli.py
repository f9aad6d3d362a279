"""`mechnum run <experiment>` and `mechnum check <suite>`."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from .config import ExperimentConfig, apply_env_overrides, load_config
from .consts import CheckSuites, Experiments
from .errors import ConfigError, MechnumError
from .experiments import SUITE_EXPERIMENTS, failed_properties, run_check, run_experiment
from .log import configure_logging, resolve_level

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY_FAILED = 1
EXIT_ERROR = 2


def _common_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="TOML experiment file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--workers", type=int, default=None, help="process pool size")
    parser.add_argument("--samples", type=int, default=None, help="override n_samples")
    parser.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mechnum", description="Incentive mechanisms for network utility maximization")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an example or harness and write its artifacts")
    run.add_argument("experiment", choices=Experiments.ALL)
    _common_options(run)

    check = sub.add_parser("check", help="run a property suite and write summary.json")
    check.add_argument("suite", choices=CheckSuites.ALL)
    _common_options(check)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults < config file < environment < command-line flags."""
    experiment = args.experiment if args.command == "run" else SUITE_EXPERIMENTS[args.suite]
    cfg = load_config(args.config, experiment)
    apply_env_overrides(cfg)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("workers must be at least 1")
        cfg.workers = args.workers
    if args.samples is not None:
        if args.samples < 1:
            raise ConfigError("samples must be at least 1")
        cfg.n_samples = args.samples
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(resolve_level(args.verbose))
    try:
        cfg = resolve_config(args)
        if args.command == "run":
            summary = run_experiment(cfg)
        else:
            summary = run_check(args.suite, cfg)
    except MechnumError as error:
        print(f"mechnum: error: {error}", file=sys.stderr)
        return EXIT_ERROR

    failures = failed_properties(summary)
    if failures:
        print(f"mechnum: failed properties: {', '.join(failures)}", file=sys.stderr)
        return EXIT_PROPERTY_FAILED
    logger.info("all properties passed; outputs in %s", cfg.output_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
