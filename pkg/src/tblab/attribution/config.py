"""Attribution settings."""

import math
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator


class KeepMode(str, Enum):
    """Which key tokens a masked layer keeps."""

    LAYER = "layer"
    UNION = "union"


class AttributionConfig(BaseModel):
    """
    Settings of key-token extraction and the masking sweep.

    Attributes
    ----------
    gamma : float
        Acceptance threshold on the Distance score. Scores lie in
        ``[-1, 2]``, so values outside that range accept everything or
        nothing.
    top_k : int
        Attention sources enqueued per accepted token.
    aggregation : str
        How accepted scores combine into per-modality contributions.
    keep_mode : KeepMode
        ``layer`` keeps each masked layer's own key tokens; ``union`` keeps
        the union over the masked layers.
    sweep_stride : int | None
        Layers added per masking-sweep row; ``None`` means ``ceil(L / 8)``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = 0.8
    top_k: int = Field(5, ge=1)
    aggregation: str = "sum"
    keep_mode: KeepMode = KeepMode.LAYER
    sweep_stride: int | None = Field(None, ge=1)

    @field_validator("gamma")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            msg = "gamma must be finite"
            raise ValueError(msg)
        return value

    @field_validator("aggregation")
    @classmethod
    def _known_aggregation(cls, value: str) -> str:
        if value != "sum":
            msg = f"unsupported score aggregation {value!r}"
            raise ValueError(msg)
        return value
