"""``tblab gen-data``: generate the synthetic attribute-world corpus."""

import argparse

from tblab.cli.options import add_config_arguments, config_from_args
from tblab.cli.rundir import ensure_writable
from tblab.core.env import Env
from tblab.core.logger import log_start_end, setup_logger
from tblab.data.io import save_corpus
from tblab.data.world import generate_corpus

logger = setup_logger("tblab.cli.commands.gen_data", level=Env().LOGGER_LEVEL)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("gen-data", help="generate the corpus")
    add_config_arguments(parser)
    parser.add_argument("--records", type=int, help="number of edit records")
    parser.add_argument("--force", action="store_true", help="overwrite an existing corpus")
    parser.set_defaults(run=run)


@log_start_end(logger=logger)
def run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    path = config.paths.corpus
    ensure_writable(path, args.force)
    corpus = generate_corpus(config.world)
    save_corpus(corpus, path)
    logger.info(f"{len(corpus)} records, {len(corpus.vocab)} tokens -> {path}")
    return 0
