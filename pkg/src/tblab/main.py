"""tblab command-line entry point."""

import argparse
import logging
import sys
from collections.abc import Sequence

import coloredlogs

from tblab import __version__
from tblab.cli.commands import COMMANDS
from tblab.core.env import Env
from tblab.core.logger import setup_logger
from tblab.core.standard_models.abstract.errors import TBLabError
from tblab.core.utils import exit_with_error

env = Env()
logger = setup_logger("tblab.main", level=env.LOGGER_LEVEL)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tblab",
        description="Multimodal model-editing lab: locality grids, composite editing and token attribution.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """
    Parse ``argv`` and run the chosen subcommand.

    Returns the subcommand's exit code. A :class:`TBLabError` escaping the
    command exits with the error's code (2 config, 3 data, 4 numeric).
    """
    # Remove all handlers associated with the root logger object.
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)
    # Add coloredlogs' coloured StreamHandler to the root logger.
    coloredlogs.install(level=env.LOGGER_LEVEL)

    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except TBLabError as e:
        logger.exception(f"{args.command} failed")
        exit_with_error(e.exit_code, f"{type(e).__name__}: {e}")


if __name__ == "__main__":
    sys.exit(main())
