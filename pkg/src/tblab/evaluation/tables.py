"""Table export of metric reports and masking sweeps."""

from collections.abc import Mapping, Sequence
from functools import reduce

import pandas as pd

from tblab.attribution.masking import MaskSweepRow
from tblab.core.constants import CANONICAL_NINE
from tblab.core.standard_models.abstract.errors import ConfigError
from tblab.core.standard_models.base_model import (
    MaskSweepLongTable,
    MaskSweepTable,
    MetricSummaryTable,
    PerPairTable,
)
from tblab.evaluation.metrics import METRIC_CLASSES, MetricReport

GRID_LOCALITY_CELLS = tuple(
    f"T{i}I{j}" for i in range(1, 5) for j in range(1, 5) if (i, j) != (1, 1)
)


def per_pair_columns(full: bool = False) -> list[str]:
    """
    Cell columns of the per-pair table: the canonical nine, then the rest.

    Examples
    --------
    >>> len(per_pair_columns()), len(per_pair_columns(full=True))
    (9, 15)
    """
    columns = list(CANONICAL_NINE)
    if full:
        columns += [c for c in GRID_LOCALITY_CELLS if c not in CANONICAL_NINE]
    return columns


def _nine_mean(values: Mapping[str, float]) -> float | None:
    nine = [values[c] for c in CANONICAL_NINE if c in values]
    return sum(nine) / len(nine) if len(nine) == len(CANONICAL_NINE) else None


def per_pair_frame(
    reports: Mapping[str, MetricReport], full: bool = False, consistency: bool = False
) -> pd.DataFrame:
    """
    One row per labelled report with per-cell scores and the canonical-nine mean.

    With ``consistency`` the cells hold the share of unchanged answers
    (post = pre) instead of the metric scores. Missing cells are left empty.
    The frame is validated against
    :class:`~tblab.core.standard_models.base_model.PerPairTable`.
    """
    columns = per_pair_columns(full)
    rows = []
    for label, report in reports.items():
        values = report.consistency if consistency else report.per_pair
        rows.append(
            {
                "label": label,
                **{c: values.get(c) for c in columns},
                "Mean": _nine_mean(values) if consistency else report.mean_nine,
            }
        )
    frame = pd.DataFrame(rows, columns=["label", *columns, "Mean"])
    frame = frame.astype({c: "float64" for c in [*columns, "Mean"]})
    return PerPairTable.validate(frame)


def summary_frame(reports: Mapping[str, MetricReport]) -> pd.DataFrame:
    """One row per labelled report with the eight metrics and both means."""
    columns = ["label", "n_edits", *METRIC_CLASSES, "locality_mean", "mean_nine"]
    rows = [
        {
            "label": label,
            "n_edits": report.n_edits,
            **{name: getattr(report, name) for name in METRIC_CLASSES},
            "locality_mean": report.locality_mean,
            "mean_nine": report.mean_nine,
        }
        for label, report in reports.items()
    ]
    frame = pd.DataFrame(rows, columns=columns)
    frame = frame.astype({c: "float64" for c in columns[2:]})
    return MetricSummaryTable.validate(frame)


SWEEP_KEYS = ["layer_range", "start", "end"]


def mask_sweep_frame(dataset: str, rows: Sequence[MaskSweepRow]) -> pd.DataFrame:
    """
    Wide sweep table of one dataset: a row per layer range, its fraction in ``dataset``.

    Raises
    ------
    ConfigError
        If ``dataset`` collides with a key column.
    """
    if dataset in SWEEP_KEYS:
        msg = f"dataset label {dataset!r} is reserved"
        raise ConfigError(msg)
    frame = pd.DataFrame(
        {
            "layer_range": [r.layer_range for r in rows],
            "start": [r.start for r in rows],
            "end": [r.end for r in rows],
            dataset: [r.fraction for r in rows],
        }
    )
    return MaskSweepTable.validate(frame)


def merge_mask_sweeps(frames: Mapping[str, pd.DataFrame]) -> pd.DataFrame:
    """
    Join the wide sweep tables of several runs on their layer ranges.

    A run with a single dataset column is relabelled with its run label;
    the columns of a run with several become ``label:dataset``. Ranges a run
    did not sweep are left empty.
    """
    relabelled = []
    for label, frame in frames.items():
        datasets = [c for c in frame.columns if c not in SWEEP_KEYS]
        names = {datasets[0]: label} if len(datasets) == 1 else {d: f"{label}:{d}" for d in datasets}
        relabelled.append(frame.rename(columns=names))
    merged = reduce(
        lambda left, right: left.merge(right, on=SWEEP_KEYS, how="outer", sort=False),
        relabelled,
    )
    return MaskSweepTable.validate(merged)


def mask_sweep_long(frame: pd.DataFrame) -> pd.DataFrame:
    """Melt a wide sweep table into one row per (dataset, layer range)."""
    long = frame.melt(id_vars=SWEEP_KEYS, var_name="dataset", value_name="fraction")
    long = long.dropna(subset=["fraction"])[["dataset", *SWEEP_KEYS, "fraction"]]
    return MaskSweepLongTable.validate(long.reset_index(drop=True))
