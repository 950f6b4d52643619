import os
from pathlib import Path
from typing import Any, ClassVar

import dotenv


class SingletonMeta(type):
    """Metaclass keeping exactly one instance per class."""

    _instances: ClassVar[dict[type, Any]] = {}

    def __call__(cls, *args, **kwargs):
        if cls not in cls._instances:
            cls._instances[cls] = super().__call__(*args, **kwargs)
        return cls._instances[cls]


class Env(metaclass=SingletonMeta):
    """Environment variables."""

    _environ: dict[str, str]

    def __init__(self) -> None:
        env_path = dotenv.find_dotenv(usecwd=True)
        if env_path:
            dotenv.load_dotenv(Path(env_path))

        self._environ = os.environ.copy()

    @property
    def LOGGER_LEVEL(self) -> int:  # noqa: N802
        """
        Get the global logger level.

        Returns
        -------
        int
            The numeric logging level (default: 20 for INFO).

        Notes
        -----
        Mapping of string levels to numeric values:
        DEBUG: 10, INFO: 20, WARNING: 30, ERROR: 40, CRITICAL: 50
        """
        level_map = {
            "DEBUG": 10,
            "INFO": 20,
            "WARNING": 30,
            "ERROR": 40,
            "CRITICAL": 50,
        }
        return level_map.get(
            self._environ.get("LOGGER_LEVEL", "INFO").upper(), 20
        )

    @property
    def RUNS_DIR(self) -> Path:  # noqa: N802
        """Root directory for timestamped run directories (default: runs)."""
        return Path(self._environ.get("TBLAB_RUNS_DIR", "runs"))

    @property
    def NUM_THREADS(self) -> int | None:  # noqa: N802
        """Thread cap for per-edit parallelism, if set."""
        value = self._environ.get("TBLAB_NUM_THREADS")
        return int(value) if value else None
