"""``tblab mask-sweep``: retained accuracy when only key tokens survive the top layers."""

import argparse

from tblab.attribution.key_tokens import extract_key_tokens
from tblab.attribution.masking import default_layer_ranges, mask_sweep
from tblab.cli.commands.pipeline import load_inputs
from tblab.cli.options import add_attribution_arguments, add_config_arguments, config_from_args
from tblab.cli.rundir import RunDirectory
from tblab.core.constants import DIAGNOSTICS_FORMAT, TRACE_FORMAT
from tblab.core.env import Env
from tblab.core.logger import log_start_end, setup_logger
from tblab.core.standard_models.base_model import MaskSweepTable
from tblab.data.sampling import select_edits
from tblab.evaluation.tables import mask_sweep_frame
from tblab.model.transformer import forward_with_trace

logger = setup_logger("tblab.cli.commands.mask_sweep", level=Env().LOGGER_LEVEL)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser(
        "mask-sweep", help="mask non-key tokens over growing layer suffixes"
    )
    add_config_arguments(parser)
    add_attribution_arguments(parser)
    parser.add_argument("--edits", type=int, help="number of corpus records swept")
    parser.add_argument("--dataset", default="corpus", help="dataset column of the sweep table")
    parser.set_defaults(run=run)


@log_start_end(logger=logger)
def run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    corpus, params, model_config = load_inputs(config)
    records = select_edits(corpus, config.selection.n_edits, config.selection.seed)

    inputs = [corpus.model_input(r.question, r.image) for r in records]
    labels = [corpus.vocab.id(r.answer) for r in records]
    paths = [
        extract_key_tokens(
            forward_with_trace(params, x.image_features, x.text_ids, model_config)[1],
            config.attribution,
        )
        for x in inputs
    ]
    ranges = default_layer_ranges(model_config.n_layers, config.attribution.sweep_stride)
    rows = mask_sweep(params, inputs, labels, paths, ranges, model_config, config.attribution)
    for row in rows:
        logger.info(
            f"layers {row.layer_range}: accuracy {row.accuracy:.3f}, retained {row.fraction:.3f}"
        )

    frame = mask_sweep_frame(args.dataset, rows)
    run_dir = RunDirectory.create(config, "mask-sweep", config.selection.seed)
    run_dir.write_table("mask_sweep.csv", MaskSweepTable, frame)
    run_dir.write_envelope("mask_sweep.json", DIAGNOSTICS_FORMAT, {args.dataset: rows})
    run_dir.write_envelope(
        "key_tokens.json",
        TRACE_FORMAT,
        {str(r.id): path for r, path in zip(records, paths, strict=True)},
    )
    run_dir.finish()
    return 0
