"""``tblab train``: fit the base model and write its checkpoint."""

import argparse

from tblab.cli.options import add_config_arguments, config_from_args
from tblab.cli.rundir import ensure_writable
from tblab.core.env import Env
from tblab.core.logger import log_start_end, setup_logger
from tblab.data.io import load_corpus
from tblab.model.params import save_checkpoint
from tblab.model.training import corpus_accuracy, train_base

logger = setup_logger("tblab.cli.commands.train", level=Env().LOGGER_LEVEL)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train", help="train the base model on the corpus")
    add_config_arguments(parser)
    parser.add_argument("--force", action="store_true", help="overwrite an existing checkpoint")
    parser.set_defaults(run=run)


@log_start_end(logger=logger)
def run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    config.validate_inputs("corpus")
    ensure_writable(config.paths.checkpoint, args.force)

    corpus = load_corpus(config.paths.corpus)
    params = train_base(corpus, config.model, config.train)
    save_checkpoint(config.paths.checkpoint, params, config.model, corpus.vocab.tokens)
    logger.info(
        f"accuracy {corpus_accuracy(params, corpus, config.model):.4f} -> {config.paths.checkpoint}"
    )
    return 0
