"""
``tblab pipeline``: edit and evaluate one instance at a time.

For every selected edit the evaluation grid is sampled, the training-side
batch is drawn apart from it, the base model is edited and the grid is
answered by the pre- and post-edit model. Edits run independently (in a
thread pool with ``--jobs``) and are aggregated in edit-id order, so the
report does not depend on completion order. An edit that fails is
recorded in the manifest and the run goes on; the exit code is the
highest failure code.
"""

import argparse
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import pandas as pd
from pydantic import BaseModel

from tblab.attribution.config import AttributionConfig
from tblab.attribution.key_tokens import extract_key_tokens
from tblab.attribution.modality import (
    ModalityRatioSeries,
    SignTestResult,
    kl_modality_ratio,
    mean_layer_score,
    modality_ratio,
    sign_test,
)
from tblab.cli.options import (
    add_attribution_arguments,
    add_config_arguments,
    add_editor_arguments,
    config_from_args,
)
from tblab.cli.rundir import RunDirectory
from tblab.core.config import RunConfig
from tblab.core.constants import (
    DIAGNOSTICS_FORMAT,
    EDIT_REPORT_FORMAT,
    REPORT_FORMAT,
    SUITE_FORMAT,
)
from tblab.core.env import Env
from tblab.core.logger import log_start_end, setup_logger
from tblab.core.standard_models.abstract.errors import ConfigError, DataError, TBLabError
from tblab.core.standard_models.base_model import KLRatioTable, ModalityRatioTable, PerPairTable
from tblab.data.io import load_corpus
from tblab.data.sampling import EvalSuite, build_grid, sample_sets, select_edits
from tblab.data.world import Corpus, EditRecord
from tblab.editing.batch import build_adversarial_batch
from tblab.editing.editor import EditReport, apply_edit
from tblab.evaluation.metrics import CellResult, MetricReport, aggregate, evaluate_suite
from tblab.evaluation.tables import per_pair_frame
from tblab.model.config import ModelConfig
from tblab.model.params import Parameters, load_checkpoint
from tblab.model.transformer import forward_with_trace

logger = setup_logger("tblab.cli.commands.pipeline", level=Env().LOGGER_LEVEL)

CI_CELLS = ("T1I2", "T2I1", "T2I2")
# Inputs the contribution ratio is traced on: the RI and CI cells and T-Gen.
SCORE_CELLS = ("T1I3", "T3I1", *CI_CELLS, "T-Gen")


class EditDiagnostics(BaseModel):
    """Modality diagnostics of one edit; ``pre`` and ``post`` are keyed by cell label."""

    edit_id: int
    pre: dict[str, ModalityRatioSeries]
    post: dict[str, ModalityRatioSeries]
    kl_ratio: float

    def layer_score(self, stage: str, layer: int) -> float:
        series = self.pre if stage == "pre" else self.post
        return mean_layer_score(list(series.values()), layer)


class DiagnosticsSummary(BaseModel):
    top_layer_drop: SignTestResult
    mean_kl_ratio: float | None


@dataclass
class EditOutcome:
    edit_id: int
    suite: EvalSuite
    report: EditReport
    results: list[CellResult]
    diagnostics: EditDiagnostics | None = None


def edit_diagnostics(
    pre: Parameters,
    post: Parameters,
    suite: EvalSuite,
    corpus: Corpus,
    model_config: ModelConfig,
    attribution: AttributionConfig,
) -> EditDiagnostics:
    """Contribution ratios on the locality and T-Gen inputs and the KL shift ratio on the CI cells."""
    series: dict[str, dict[str, ModalityRatioSeries]] = {"pre": {}, "post": {}}
    for label in SCORE_CELLS:
        x = corpus.model_input(*suite.cell_input(suite.cell(label)))
        for stage, params in (("pre", pre), ("post", post)):
            _, trace = forward_with_trace(params, x.image_features, x.text_ids, model_config)
            series[stage][label] = modality_ratio(
                extract_key_tokens(trace, attribution), model_config
            )
    ci_inputs = [corpus.model_input(*suite.cell_input(suite.cell(label))) for label in CI_CELLS]
    return EditDiagnostics(
        edit_id=suite.edit.id,
        pre=series["pre"],
        post=series["post"],
        kl_ratio=kl_modality_ratio(pre, post, ci_inputs, model_config),
    )


def process_edit(
    edit: EditRecord,
    base: Parameters,
    corpus: Corpus,
    model_config: ModelConfig,
    config: RunConfig,
) -> EditOutcome:
    """Sample, edit and evaluate a single edit against the untouched base model."""
    seed = config.selection.seed
    sets = sample_sets(edit, corpus, seed)
    suite = build_grid(sets)
    batch = build_adversarial_batch(edit, corpus, sets, seed)
    post, report = apply_edit(base, edit, batch, config.editor, corpus, model_config)
    results = evaluate_suite(base, post, suite, corpus, model_config)
    outcome = EditOutcome(edit_id=edit.id, suite=suite, report=report, results=results)
    if config.selection.diagnostics:
        outcome.diagnostics = edit_diagnostics(
            base, post, suite, corpus, model_config, config.attribution
        )
    return outcome


def modality_frame(label: str, diagnostics: list[EditDiagnostics]) -> pd.DataFrame:
    rows = [
        {
            "label": label,
            "edit_id": d.edit_id,
            "cell": cell,
            "stage": stage,
            "layer": entry.layer,
            "ratio": entry.ratio,
            "flag": entry.flag.value,
        }
        for d in diagnostics
        for stage, by_cell in (("pre", d.pre), ("post", d.post))
        for cell, series in by_cell.items()
        for entry in series.layers
    ]
    return pd.DataFrame(
        rows, columns=["label", "edit_id", "cell", "stage", "layer", "ratio", "flag"]
    )


def summarize_diagnostics(diagnostics: list[EditDiagnostics], top_layer: int) -> DiagnosticsSummary:
    """
    One-sided sign test for a top-layer ratio drop and the mean KL shift ratio.

    Each edit contributes its top-layer score averaged over the traced cells.
    """
    before = [d.layer_score("pre", top_layer) for d in diagnostics]
    after = [d.layer_score("post", top_layer) for d in diagnostics]
    kl = [d.kl_ratio for d in diagnostics]
    return DiagnosticsSummary(
        top_layer_drop=sign_test(before, after, alternative="greater"),
        mean_kl_ratio=sum(kl) / len(kl) if kl else None,
    )


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("pipeline", help="edit and evaluate selected records")
    add_config_arguments(parser)
    add_editor_arguments(parser)
    add_attribution_arguments(parser)
    parser.add_argument("--edits", type=int, help="number of edits")
    parser.add_argument("--jobs", type=int, help="edits processed concurrently")
    parser.add_argument(
        "--diagnostics",
        action="store_true",
        default=None,
        help="also write modality-ratio and KL-ratio diagnostics",
    )
    parser.add_argument(
        "--full", action="store_true", default=None, help="all 15 locality cells in per_pair.csv"
    )
    parser.add_argument(
        "--consistency",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="also write consistency.csv, the per-cell share of unchanged answers",
    )
    parser.add_argument(
        "--sequential", action="store_true", help="rejected: edits always run one at a time"
    )
    parser.add_argument(
        "--batch-edits", type=int, help="rejected: edits always run one at a time"
    )
    parser.set_defaults(run=run)


def load_inputs(config: RunConfig) -> tuple[Corpus, Parameters, ModelConfig]:
    config.validate_inputs("corpus", "checkpoint")
    corpus = load_corpus(config.paths.corpus)
    base, model_config, vocab = load_checkpoint(config.paths.checkpoint)
    if vocab != corpus.vocab.tokens:
        msg = "the checkpoint vocabulary does not match the corpus"
        raise DataError(msg)
    return corpus, base, model_config


@log_start_end(logger=logger)
def run(args: argparse.Namespace) -> int:
    if args.sequential or args.batch_edits is not None:
        msg = "only single-edit-at-a-time editing is supported; drop --sequential/--batch-edits"
        raise ConfigError(msg)
    config = config_from_args(args)
    corpus, base, model_config = load_inputs(config)
    edits = select_edits(corpus, config.selection.n_edits, config.selection.seed)

    jobs = config.selection.jobs
    if Env().NUM_THREADS:
        jobs = min(jobs, Env().NUM_THREADS)
    logger.info(f"{len(edits)} edits with editor {config.editor.name!r}, {jobs} job(s)")
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {
            edit.id: pool.submit(process_edit, edit, base, corpus, model_config, config)
            for edit in edits
        }

    outcomes: list[EditOutcome] = []
    failures: dict[str, str] = {}
    exit_code = 0
    for edit_id, future in sorted(futures.items()):
        try:
            outcomes.append(future.result())
        except TBLabError as e:
            logger.error(f"edit {edit_id} failed: {e}")
            failures[str(edit_id)] = f"{type(e).__name__}: {e}"
            exit_code = max(exit_code, e.exit_code)

    run_dir = RunDirectory.create(config, "pipeline", config.selection.seed)
    for outcome in outcomes:
        name = f"edit-{outcome.edit_id:06d}.json"
        run_dir.write_envelope(f"suites/{name}", SUITE_FORMAT, outcome.suite)
        run_dir.write_envelope(f"edits/{name}", EDIT_REPORT_FORMAT, outcome.report)

    report = aggregate(
        [r for outcome in outcomes for r in outcome.results],
        metadata={
            "editor": config.editor.name,
            "lambdas": list(config.editor.lambdas),
            "target_params": config.editor.target_params,
            "loss_combination": [t.value for t in config.editor.loss_combination],
            "n_requested": len(edits),
            "failed_edits": sorted(int(k) for k in failures),
        },
    )
    _log_report(report)
    run_dir.write_envelope("report.json", REPORT_FORMAT, report)
    run_dir.write_table(
        "per_pair.csv",
        PerPairTable,
        per_pair_frame({config.editor.name: report}, full=config.report.full),
    )
    if config.report.consistency and report.n_edits:
        run_dir.write_table(
            "consistency.csv",
            PerPairTable,
            per_pair_frame(
                {config.editor.name: report}, full=config.report.full, consistency=True
            ),
        )

    diagnostics = [o.diagnostics for o in outcomes if o.diagnostics is not None]
    if config.selection.diagnostics:
        run_dir.write_table(
            "modality_ratio.csv", ModalityRatioTable, modality_frame(config.editor.name, diagnostics)
        )
        run_dir.write_table(
            "kl_ratio.csv",
            KLRatioTable,
            pd.DataFrame(
                [
                    {"label": config.editor.name, "edit_id": d.edit_id, "ratio": d.kl_ratio}
                    for d in diagnostics
                ],
                columns=["label", "edit_id", "ratio"],
            ),
        )
        run_dir.write_envelope(
            "diagnostics.json",
            DIAGNOSTICS_FORMAT,
            summarize_diagnostics(diagnostics, model_config.n_layers),
        )

    run_dir.finish(failures, exit_code)
    return exit_code


def _log_report(report: MetricReport) -> None:
    if report.n_edits == 0:
        logger.info(f"report: {report.note}")
        return
    logger.info(
        f"Rel {report.rel:.3f} | T-Gen {report.t_gen:.3f} | I-Gen {report.i_gen:.3f} | "
        f"T-Loc {report.t_loc:.3f} | I-Loc {report.i_loc:.3f} | RI-Loc {report.ri_loc:.3f} | "
        f"NI-Loc {report.ni_loc:.3f} | CI-Loc {report.ci_loc:.3f}"
    )
