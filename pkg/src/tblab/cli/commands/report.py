"""
``tblab report``: merge run directories into comparison tables.

Pipeline runs contribute their metric reports (``comparison.csv`` with the
per-cell layout, ``summary.csv`` with the eight metrics) and, when they
were run with diagnostics, their modality-ratio and KL-ratio tables, and
with the consistency flag a per-cell table of unchanged answers. Mask-sweep
runs are joined on their layer ranges into ``mask_sweep.csv`` (one column
per run) and melted into the plot-ready ``mask_sweep_long.csv``. Long tables
are concatenated in the order the runs are given, relabelled with the run
labels. ``reference.json`` carries the full-scale reference numbers the
desk-scale tables are read against.
"""

import argparse
from pathlib import Path

import pandas as pd

from tblab.cli.options import add_config_arguments, config_from_args
from tblab.cli.rundir import RunDirectory
from tblab.core.constants import (
    REFERENCE_FORMAT,
    REFERENCE_MASK_SWEEP_BLIP2OPT_VQA,
    REFERENCE_MEAN_NINE_MEND_BLIP2OPT_VLKEB,
    REPORT_FORMAT,
)
from tblab.core.env import Env
from tblab.core.logger import log_start_end, setup_logger
from tblab.core.standard_models.abstract.errors import ConfigError, DataError
from tblab.core.standard_models.abstract.responses import Envelope
from tblab.core.standard_models.base_model import (
    KLRatioTable,
    MaskSweepLongTable,
    MaskSweepTable,
    MetricSummaryTable,
    ModalityRatioTable,
    PerPairTable,
    TableModel,
)
from tblab.core.utils import read_json
from tblab.evaluation.metrics import MetricReport
from tblab.evaluation.tables import (
    mask_sweep_long,
    merge_mask_sweeps,
    per_pair_frame,
    summary_frame,
)

logger = setup_logger("tblab.cli.commands.report", level=Env().LOGGER_LEVEL)

# file name -> (schema, column replaced by the run label)
LONG_TABLES: dict[str, tuple[type[TableModel], str]] = {
    "modality_ratio.csv": (ModalityRatioTable, "label"),
    "kl_ratio.csv": (KLRatioTable, "label"),
}

REFERENCE = {
    "mask_sweep_retained": REFERENCE_MASK_SWEEP_BLIP2OPT_VQA,
    "mean_nine": REFERENCE_MEAN_NINE_MEND_BLIP2OPT_VLKEB,
}


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("report", help="merge run directories into comparison tables")
    add_config_arguments(parser)
    parser.add_argument("runs", type=Path, nargs="+", help="run directories")
    parser.add_argument("--labels", nargs="+", help="one label per run directory")
    parser.add_argument("--full", action="store_true", default=None, help="all 15 locality cells")
    parser.add_argument(
        "--consistency",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="also write the per-cell share of unchanged answers",
    )
    parser.set_defaults(run=run)


def read_report(run_dir: Path) -> MetricReport | None:
    """The metric report of a pipeline run, or None for other runs."""
    path = run_dir / "report.json"
    if not path.is_file():
        return None
    envelope = Envelope[MetricReport](**read_json(path))
    if envelope.format != REPORT_FORMAT:
        msg = f"{path}: unsupported report format {envelope.format!r}"
        raise DataError(msg)
    return envelope.payload


def run_labels(runs: list[Path], labels: list[str] | None) -> list[str]:
    """
    Explicit labels, else each run's editor name, else its directory name.

    Raises
    ------
    ConfigError
        If the labels are not one per run or not unique.
    """
    if labels is None:
        labels = []
        for run_dir in runs:
            report = read_report(run_dir)
            editor = report.metadata.get("editor") if report else None
            labels.append(editor or run_dir.name)
    if len(labels) != len(runs):
        msg = f"{len(labels)} labels for {len(runs)} runs"
        raise ConfigError(msg)
    if len(set(labels)) != len(labels):
        msg = f"run labels {labels} are not unique; pass --labels"
        raise ConfigError(msg)
    return labels


def merge_long_tables(runs: list[Path], labels: list[str]) -> dict[str, pd.DataFrame]:
    merged = {}
    for name, (schema, label_column) in LONG_TABLES.items():
        frames = []
        for run_dir, label in zip(runs, labels, strict=True):
            path = run_dir / name
            if not path.is_file():
                continue
            frame = schema.read_csv(path)
            if frame.empty:
                continue
            frame[label_column] = label
            frames.append(frame)
        if frames:
            merged[name] = pd.concat(frames, ignore_index=True)
    return merged


def merge_sweeps(runs: list[Path], labels: list[str]) -> pd.DataFrame | None:
    """The joined wide sweep table of the runs that hold one, or None."""
    frames = {
        label: MaskSweepTable.read_csv(run_dir / "mask_sweep.csv")
        for run_dir, label in zip(runs, labels, strict=True)
        if (run_dir / "mask_sweep.csv").is_file()
    }
    return merge_mask_sweeps(frames) if frames else None


@log_start_end(logger=logger)
def run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    missing = [str(r) for r in args.runs if not r.is_dir()]
    if missing:
        msg = f"run directories not found: {missing}"
        raise ConfigError(msg)
    labels = run_labels(args.runs, args.labels)

    reports = {}
    for run_dir, label in zip(args.runs, labels, strict=True):
        report = read_report(run_dir)
        if report is not None:
            reports[label] = report
    tables = merge_long_tables(args.runs, labels)
    sweeps = merge_sweeps(args.runs, labels)
    if not reports and not tables and sweeps is None:
        msg = "none of the run directories holds a report or a table"
        raise DataError(msg)

    out = RunDirectory.create(config, "report", config.selection.seed)
    if reports:
        out.write_envelope("reports.json", REPORT_FORMAT, reports)
        out.write_table(
            "comparison.csv", PerPairTable, per_pair_frame(reports, full=config.report.full)
        )
        out.write_table("summary.csv", MetricSummaryTable, summary_frame(reports))
        if config.report.consistency:
            out.write_table(
                "consistency.csv",
                PerPairTable,
                per_pair_frame(reports, full=config.report.full, consistency=True),
            )
    for name, frame in tables.items():
        out.write_table(name, LONG_TABLES[name][0], frame)
    if sweeps is not None:
        out.write_table("mask_sweep.csv", MaskSweepTable, sweeps)
        out.write_table("mask_sweep_long.csv", MaskSweepLongTable, mask_sweep_long(sweeps))
    out.write_envelope("reference.json", REFERENCE_FORMAT, REFERENCE)
    logger.info(f"merged {len(args.runs)} run(s) into {out.path}")
    out.finish()
    return 0
