"""Configuration module for tblab runs.

A run is configured from three layers: environment variables (prefix
``TBLAB_``, nested keys joined by ``__``), an optional TOML file with
``format = "tb-cfg-1"`` and command-line flags. Flags win over the file,
the file wins over the environment.
"""

import tomllib
from pathlib import Path
from typing import Any, Self

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from tblab.attribution.config import AttributionConfig
from tblab.core.constants import CONFIG_FORMAT
from tblab.core.env import Env
from tblab.core.helpers import deep_merge, stable_hash
from tblab.core.standard_models.abstract.errors import ConfigError
from tblab.data.world import Vocabulary, WorldConfig
from tblab.editing.config import EditorConfig
from tblab.model.config import ModelConfig, TrainConfig


class PathsConfig(BaseModel):
    """
    File locations.

    Attributes
    ----------
    corpus : Path
        JSON Lines corpus.
    checkpoint : Path
        Base-model checkpoint.
    output_dir : Path
        Root of the timestamped run directories.
    """

    model_config = ConfigDict(extra="forbid")

    corpus: Path = Path("data/corpus.jsonl")
    checkpoint: Path = Path("data/base.ckpt")
    output_dir: Path = Field(default_factory=lambda: Env().RUNS_DIR)


class SelectionConfig(BaseModel):
    """Which edits a pipeline run performs and how many run at once."""

    model_config = ConfigDict(extra="forbid")

    n_edits: int = Field(50, ge=0)
    seed: int = Field(0, ge=0)
    jobs: int = Field(1, ge=1)
    diagnostics: bool = False


class ReportFlags(BaseModel):
    """Report-only switches; they never change a number."""

    model_config = ConfigDict(extra="forbid")

    full: bool = False
    consistency: bool = True


class RunConfig(BaseSettings):
    """
    Complete configuration of one tblab command.

    The model's vocabulary size and image feature width always follow the
    world, so a corpus and a model built from one config fit each other.
    """

    model_config = SettingsConfigDict(
        env_prefix="TBLAB_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    format: str = CONFIG_FORMAT
    paths: PathsConfig = Field(default_factory=PathsConfig)
    world: WorldConfig = Field(default_factory=WorldConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    editor: EditorConfig = Field(default_factory=EditorConfig)
    attribution: AttributionConfig = Field(default_factory=AttributionConfig)
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    report: ReportFlags = Field(default_factory=ReportFlags)

    @model_validator(mode="after")
    def _fit_model_to_world(self) -> Self:
        if self.format != CONFIG_FORMAT:
            msg = f"unsupported config format {self.format!r}, expected {CONFIG_FORMAT!r}"
            raise ValueError(msg)
        fitted = self.model.model_copy(
            update={
                "vocab_size": len(Vocabulary.from_world(self.world)),
                "image_feature_dim": self.world.feature_dim,
            }
        )
        self.model = ModelConfig(**fitted.model_dump())
        return self

    def validate_inputs(self, *names: str) -> None:
        """
        Check that the named input paths exist before any compute.

        Raises
        ------
        ConfigError
            If a path is missing.
        """
        for name in names:
            path = getattr(self.paths, name)
            if not Path(path).exists():
                msg = f"{name} path {path} does not exist"
                raise ConfigError(msg)


def config_hash(config: RunConfig) -> str:
    """
    Hash of every setting that can change a number.

    Paths, report flags and the thread count are left out, so moving files
    or rendering a fuller table keeps the hash.
    """
    numerics = config.model_dump(
        mode="json",
        exclude={"paths": True, "report": True, "selection": {"jobs"}},
    )
    return stable_hash(numerics)


def load_config(path: Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """
    Build a :class:`RunConfig` from an optional TOML file and overrides.

    Raises
    ------
    ConfigError
        On an unreadable file, a wrong format version or invalid values.
    """
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with Path(path).open("rb") as handle:
                values = tomllib.load(handle)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(e) from e
        if values.get("format") != CONFIG_FORMAT:
            msg = f"{path}: expected format = {CONFIG_FORMAT!r}"
            raise ConfigError(msg)
    merged = deep_merge(values, overrides or {})
    try:
        return RunConfig(**merged)
    except ValidationError as e:
        raise ConfigError(e) from e
