"""
tblab subcommands.

Every module exposes ``register(subparsers)`` to declare its parser and
``run(args) -> int`` returning the process exit code.
"""

from tblab.cli.commands import gen_data, mask_sweep, pipeline, report, trace, train

COMMANDS = (gen_data, train, pipeline, trace, mask_sweep, report)
