"""Pandera table models of every CSV tblab writes.

A frame is validated against its model right before it is written, so a
CSV on disk always satisfies its schema.
"""

from pathlib import Path

import pandas as pd
import pandera.pandas as pa
from pandera.typing.pandas import Series


# The generic type of a single row in a given table.
# Should be a typed subclass of TableModel.
class TableModel(pa.DataFrameModel):
    class Config:
        strict = True
        coerce = True

    @classmethod
    def write_csv(cls, frame: pd.DataFrame, path: Path) -> Path:
        """Validate ``frame`` and write it without the index."""
        validated = cls.validate(frame)
        path.parent.mkdir(parents=True, exist_ok=True)
        validated.to_csv(path, index=False, lineterminator="\n")
        return path

    @classmethod
    def read_csv(cls, path: Path) -> pd.DataFrame:
        """Read a CSV written by :meth:`write_csv` and validate it."""
        return cls.validate(pd.read_csv(path))


class PerPairTable(TableModel):
    """Rows are methods or configs; columns are grid cells plus ``Mean``."""

    label: Series[str] = pa.Field(unique=True)
    score: Series[float] = pa.Field(
        alias=r"^(T\dI\d|Mean)$", regex=True, ge=0, le=1, nullable=True
    )


class MaskSweepTable(TableModel):
    """Rows are layer ranges; one retained-fraction column per dataset."""

    layer_range: Series[str] = pa.Field(unique=True)
    start: Series[int] = pa.Field(ge=1)
    end: Series[int] = pa.Field(ge=0)
    fraction: Series[float] = pa.Field(
        alias=r"^(?!(layer_range|start|end)$).+$", regex=True, ge=0, nullable=True
    )


class MaskSweepLongTable(TableModel):
    """Plot-ready form of :class:`MaskSweepTable`: one row per (dataset, layer range)."""

    dataset: Series[str]
    layer_range: Series[str]
    start: Series[int] = pa.Field(ge=1)
    end: Series[int] = pa.Field(ge=0)
    fraction: Series[float] = pa.Field(ge=0)


class ModalityRatioTable(TableModel):
    """Long format: one row per (label, edit, cell, stage, layer)."""

    label: Series[str]
    edit_id: Series[int]
    cell: Series[str]
    stage: Series[str] = pa.Field(isin=["pre", "post"])
    layer: Series[int] = pa.Field(ge=1)
    ratio: Series[float] = pa.Field(nullable=True)
    flag: Series[str] = pa.Field(isin=["ok", "no_text", "empty"])


class KLRatioTable(TableModel):
    label: Series[str]
    edit_id: Series[int]
    ratio: Series[float] = pa.Field(ge=0)


class MetricSummaryTable(TableModel):
    """The eight metrics of each labelled report."""

    label: Series[str] = pa.Field(unique=True)
    n_edits: Series[int] = pa.Field(ge=0)
    metric: Series[float] = pa.Field(
        alias=r"^(rel|t_gen|i_gen|t_loc|i_loc|ri_loc|ni_loc|ci_loc|locality_mean|mean_nine)$",
        regex=True,
        ge=0,
        le=1,
        nullable=True,
    )
