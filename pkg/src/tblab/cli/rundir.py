"""Timestamped run directories and the files written into them."""

import datetime as dt
from pathlib import Path
from typing import Any

import pandas as pd

from tblab.core.config import RunConfig, config_hash
from tblab.core.env import Env
from tblab.core.logger import setup_logger
from tblab.core.standard_models.abstract.errors import ConfigError
from tblab.core.standard_models.abstract.responses import Envelope
from tblab.core.standard_models.abstract.tagged import RunManifest
from tblab.core.standard_models.base_model import TableModel
from tblab.core.utils import write_json

logger = setup_logger("tblab.cli.rundir", level=Env().LOGGER_LEVEL)


def ensure_writable(path: Path, force: bool) -> None:
    """Refuse to replace an existing file unless ``force`` is set."""
    if path.exists() and not force:
        msg = f"{path} exists; pass --force to overwrite it"
        raise ConfigError(msg)


class RunDirectory:
    """
    ``<output_dir>/<UTC timestamp>-<config hash>/`` and its manifest.

    Every JSON file is an :class:`Envelope` carrying the config hash and
    the seed; every CSV is validated by its table model. The manifest is
    written last and lists the files relative to the directory.
    """

    def __init__(self, path: Path, command: str, config_hash: str, seed: int):
        self.path = path
        self.manifest = RunManifest(command=command, config_hash=config_hash, seed=seed)

    @classmethod
    def create(cls, config: RunConfig, command: str, seed: int) -> "RunDirectory":
        digest = config_hash(config)
        stamp = dt.datetime.now(tz=dt.UTC).strftime("%Y%m%dT%H%M%S%fZ")
        path = config.paths.output_dir / f"{stamp}-{digest}"
        path.mkdir(parents=True, exist_ok=False)
        logger.info(f"run directory {path}")
        return cls(path, command, digest, seed)

    @property
    def config_hash(self) -> str:
        return self.manifest.config_hash

    @property
    def seed(self) -> int:
        return self.manifest.seed

    def envelope(self, fmt: str, payload: Any) -> Envelope:
        return Envelope(
            format=fmt, config_hash=self.config_hash, seed=self.seed, payload=payload
        )

    def write_envelope(self, relative: str, fmt: str, payload: Any) -> Path:
        path = write_json(self.path / relative, self.envelope(fmt, payload))
        self.manifest.files.append(relative)
        return path

    def write_table(self, relative: str, schema: type[TableModel], frame: pd.DataFrame) -> Path:
        path = schema.write_csv(frame, self.path / relative)
        self.manifest.files.append(relative)
        return path

    def finish(self, failures: dict[str, str] | None = None, exit_code: int = 0) -> Path:
        """Write ``manifest.json``; the only file with a wall-clock time and an id."""
        self.manifest.failures = dict(failures or {})
        self.manifest.exit_code = exit_code
        self.manifest.files.sort()
        return write_json(self.path / "manifest.json", self.manifest)
