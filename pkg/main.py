#!/usr/bin/env python3
"""
MobiusSkew - Möbius disjointness experiments for torus skew products
Command line entry point: one subcommand per experiment, reports written under --out.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import Config, ConfigError, load_config
from core.cf_core import PrecisionError, ValidationError
from core.processor import ExperimentRunner

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PRECISION = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobiusskew", description=Config.APP_DESCRIPTION)
    parser.add_argument("subcommand", help=f"one of: {', '.join(Config.SUBCOMMANDS)}")
    parser.add_argument("--config", type=Path, help="flat key = value configuration file")
    parser.add_argument("--seed", type=int, help="seed for every random choice")
    parser.add_argument("--out", help="report directory")
    parser.add_argument("--precision", type=int, help="fixed point precision in bits")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def print_progress(current: int, total: int, message: str):
    logger.info(f"[{current}/{total}] {message}")


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the subcommand and map failures to exit codes"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {"seed": args.seed, "out": args.out, "precision": args.precision}
    try:
        config = load_config(args.config, overrides)
        paths = ExperimentRunner(config, print_progress).run(args.subcommand)
    except (ValidationError, ConfigError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_VALIDATION
    except PrecisionError as e:
        logger.error(f"Precision failure: {e}")
        return EXIT_PRECISION
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
