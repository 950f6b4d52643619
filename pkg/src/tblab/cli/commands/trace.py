"""``tblab trace``: key-token path of one corpus record."""

import argparse

from pydantic import BaseModel

from tblab.attribution.key_tokens import KeyTokenPath, extract_key_tokens
from tblab.attribution.modality import ModalityRatioSeries, modality_ratio
from tblab.cli.commands.pipeline import load_inputs
from tblab.cli.options import add_attribution_arguments, add_config_arguments, config_from_args
from tblab.cli.rundir import RunDirectory
from tblab.core.constants import TRACE_FORMAT
from tblab.core.env import Env
from tblab.core.logger import log_start_end, setup_logger
from tblab.core.standard_models.abstract.errors import DataError
from tblab.model.transformer import forward_with_trace

logger = setup_logger("tblab.cli.commands.trace", level=Env().LOGGER_LEVEL)


class TracePayload(BaseModel):
    record_id: int
    question: list[str]
    has_image: bool
    predicted: str
    probability: float
    path: KeyTokenPath
    ratios: ModalityRatioSeries


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("trace", help="extract the key-token path of one record")
    add_config_arguments(parser)
    add_attribution_arguments(parser)
    parser.add_argument("--record", type=int, required=True, help="corpus record id")
    parser.add_argument("--no-image", action="store_true", help="ask the question without its image")
    parser.set_defaults(run=run)


@log_start_end(logger=logger)
def run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    corpus, params, model_config = load_inputs(config)
    try:
        record = corpus.get(args.record)
    except KeyError:
        msg = f"record {args.record} is not in the corpus"
        raise DataError(msg) from None

    model_input = corpus.model_input(record.question, None if args.no_image else record.image)
    probs, trace = forward_with_trace(
        params, model_input.image_features, model_input.text_ids, model_config
    )
    path = extract_key_tokens(trace, config.attribution)
    predicted = int(probs.argmax())
    payload = TracePayload(
        record_id=record.id,
        question=record.question,
        has_image=model_input.has_image,
        predicted=corpus.vocab.decode(predicted),
        probability=float(probs[predicted]),
        path=path,
        ratios=modality_ratio(path, model_config),
    )
    logger.info(
        f"record {record.id}: answers {payload.predicted!r}, "
        f"{sum(len(layer.accepted) for layer in path.layers)} key tokens over {path.n_layers} layers"
    )

    run_dir = RunDirectory.create(config, "trace", config.selection.seed)
    run_dir.write_envelope("trace.json", TRACE_FORMAT, payload)
    run_dir.finish()
    return 0
