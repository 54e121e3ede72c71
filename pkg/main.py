#!/usr/bin/env python3
"""
Main entry point for the squanv command line.

    python main.py <command> [--config run.json] [--key value ...]

Any config key can be given as a flag after the command; flags win over the
JSON file. Exit codes: 0 success, 1 runtime failure, 2 configuration or usage
error.
"""
import argparse
import logging
import sys
from typing import Dict, List, Optional

import app
from commands.diagnostics import router as diagnostics_router
from commands.features import router as features_router
from commands.router import CommandRouter
from commands.sweeps import router as sweeps_router
from commands.train import router as train_router
from services.config import ExperimentConfig
from services.errors import ConfigurationError, SquanvError

logger = logging.getLogger("squanv")

EXIT_FAILURE = 1
EXIT_USAGE = 2


def include_router(subparsers, router: CommandRouter) -> None:
    for command in router.commands:
        parser = subparsers.add_parser(command.name, help=command.help, description=command.help, allow_abbrev=False)
        parser.add_argument("--config", default=None, help="Flat JSON config file")
        for flags, kwargs in command.arguments:
            parser.add_argument(*flags, **kwargs)
        parser.set_defaults(handler=command.handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="squanv", description="Quanvolutional networks with fidelity-regularised training")
    subparsers = parser.add_subparsers(dest="command", required=True)
    include_router(subparsers, train_router)
    include_router(subparsers, sweeps_router)
    include_router(subparsers, features_router)
    include_router(subparsers, diagnostics_router)
    return parser


def parse_overrides(tokens: List[str]) -> Dict[str, str]:
    """Turn leftover `--key value` pairs into config overrides"""
    overrides = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigurationError(f"Unexpected argument {token!r}")
        key, sep, value = token[2:].partition("=")
        if not sep:
            if i + 1 >= len(tokens):
                raise ConfigurationError(f"Missing value for {token}")
            value = tokens[i + 1]
            i += 1
        overrides[key] = value
        i += 1
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    app.configure_logging()
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0

    try:
        overrides = parse_overrides(extra)
        config = ExperimentConfig.from_sources(args.config, overrides)
    except ConfigurationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE

    try:
        args.overrides = overrides
        return args.handler(args, config)
    except ConfigurationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    except SquanvError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
