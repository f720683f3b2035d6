"""Command line for the homogenization experiments

Usage: python -m homog <subcommand> --config <path> [--jobs N] [--out DIR] [-d]
"""

import logging
import os
import sys
from argparse import ArgumentParser

from src.experiments import SUBCOMMANDS, run
from src.utils.config import load_config
from src.utils.errors import HomogError

LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def configure_logging(debug: bool):
    """Set the root level from -d or the HOMOG_LOG environment variable"""
    requested = os.environ.get("HOMOG_LOG", "WARNING").upper()
    level = "DEBUG" if debug else requested
    if level not in LEVELS:
        level = "WARNING"
    logging.basicConfig(
        format="%(levelname)s:\t%(message)s", level=getattr(logging, level)
    )
    if not debug and requested not in LEVELS:
        logging.warning("Unknown HOMOG_LOG value %r, using WARNING", requested)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="homog")
    parser.add_argument(
        "subcommand", choices=sorted(SUBCOMMANDS), help="Experiment to run"
    )
    parser.add_argument(
        "--config", required=True, type=str, help="Experiment config file"
    )
    parser.add_argument("--jobs", type=int, default=1, help="Number of parallel jobs")
    parser.add_argument(
        "--out", type=str, help="Output directory (overrides output.dir)"
    )
    parser.add_argument(
        "-d", "--debug", action="store_true", help="Enable debug logging"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.debug)
    try:
        config = load_config(args.config)
    except HomogError as error:
        logging.error("%s", error)
        return 1
    return run(args.subcommand, config, max(1, args.jobs), args.out)


if __name__ == "__main__":
    sys.exit(main())
