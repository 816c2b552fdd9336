"""
Command-line application for the ampzoo engine.

This module is the entry point for every workflow:
- Listing and rendering crowdsourced LSTM captures
- Exporting replayable supervised datasets
- Training the one-to-many TCN, one-to-one baselines and the effects encoder
- Enrolling unseen devices and sweeping data budgets
- Evaluating checkpoints and verifying gradients

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from api.commands import augment, devices, enroll, evaluate, gradcheck, render, train
from core.config import configure_logging, get_config, validate_config
from core.errors import AmpZooError, ConfigError, EmptyRegistryError, UsageError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

COMMANDS = (devices, render, augment, train, enroll, evaluate, gradcheck)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ampzoo", description="Neural guitar-effect runtime and training engine")
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging_config = get_config().logging
    if args.log_level:
        logging_config = replace(logging_config, level=args.log_level)
    if not validate_config():
        print("error: invalid engine configuration (see log)", file=sys.stderr)
        return EXIT_USAGE
    configure_logging(logging_config)

    try:
        return int(args.func(args))
    except (ConfigError, UsageError, EmptyRegistryError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (AmpZooError, OSError) as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
