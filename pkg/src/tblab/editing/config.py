"""Editor configuration and the named presets."""

import math
from enum import Enum
from typing import Any, Self

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from tblab.core.constants import DEFAULT_LAMBDAS, PROB_EPS
from tblab.core.standard_models.abstract.errors import ConfigError


class LossType(str, Enum):
    """Adversarial sample types of the multimodal locality loss."""

    RI = "RI"
    NI = "NI"
    CI = "CI"


# Preset settings fill any field the caller leaves unset.
EDITOR_PRESETS: dict[str, dict[str, Any]] = {
    "edit-only": {"lambdas": (1.0, 0.0, 0.0), "learning_rate": 3e-2, "threshold": 1e-3},
    "composite": {"lambdas": DEFAULT_LAMBDAS, "learning_rate": 1e-2, "threshold": 0.05},
}


class EditorConfig(BaseModel):
    """
    Settings of one editor.

    Attributes
    ----------
    name : str
        Label carried into reports.
    lambdas : tuple[float, float, float]
        Weights of the edit loss, the unrelated-sample locality loss and the
        multimodal locality loss.
    learning_rate : float
        Step size of plain gradient descent.
    max_steps : int
        Optimisation budget per edit.
    target_params : str | list[str]
        ``"D"``, ``"V"``, ``"DV"`` or explicit tensor names.
    loss_combination : list[LossType]
        Sample types summed in the multimodal locality loss; an empty list
        switches that term off.
    threshold : float
        Stop once the edit loss falls below it.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "composite"
    lambdas: tuple[float, float, float] = DEFAULT_LAMBDAS
    learning_rate: float = Field(1e-2, gt=0)
    max_steps: int = Field(500, ge=0)
    target_params: str | list[str] = "D"
    loss_combination: list[LossType] = Field(
        default_factory=lambda: [LossType.RI, LossType.NI, LossType.CI]
    )
    threshold: float = Field(0.05, gt=0)
    prob_eps: float = Field(PROB_EPS, gt=0)

    @model_validator(mode="before")
    @classmethod
    def _fill_preset(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        preset = EDITOR_PRESETS.get(data.get("name", "composite"), {})
        return {**preset, **data}

    @field_validator("lambdas")
    @classmethod
    def _check_lambdas(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if not all(math.isfinite(x) and x >= 0 for x in value):
            msg = f"lambdas must be finite and nonnegative, got {value}"
            raise ValueError(msg)
        return value

    @field_validator("loss_combination")
    @classmethod
    def _dedupe(cls, value: list[LossType]) -> list[LossType]:
        return sorted(set(value), key=list(LossType).index)

    @model_validator(mode="after")
    def _check_targets(self) -> Self:
        if not self.target_params:
            msg = "target_params must not be empty"
            raise ValueError(msg)
        return self

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "EditorConfig":
        """
        Build a named preset; explicit overrides (including lambdas) win.

        Examples
        --------
        >>> EditorConfig.preset("edit-only").lambdas
        (1.0, 0.0, 0.0)
        """
        if name not in EDITOR_PRESETS:
            msg = f"unknown editor {name!r}, expected one of {sorted(EDITOR_PRESETS)}"
            raise ConfigError(msg)
        return cls(name=name, **overrides)
