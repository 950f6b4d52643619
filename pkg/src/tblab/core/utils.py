import sys
from pathlib import Path
from typing import Any, NoReturn

import numpy as np
import orjson
from pydantic import BaseModel

from tblab.core.logger import setup_logger

logger = setup_logger(name="tblab.core.utils")


def _default(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, set | frozenset | tuple):
        return list(value)
    if isinstance(value, Path):
        return str(value)
    msg = f"Type is not JSON serializable: {type(value).__name__}"
    raise TypeError(msg)


class ORJsonCoder:
    """
    Encode and decode JSON using orjson.

    Keys are sorted and output is indented so that two runs producing equal
    values write byte-identical files.

    Methods
    -------
    encode(value: Any) -> bytes
        Encode a Python object (pydantic models and numpy included) to bytes.
    decode(value: bytes | str) -> Any
        Decode JSON bytes to a Python object.
    """

    OPTIONS = (
        orjson.OPT_NON_STR_KEYS
        | orjson.OPT_SERIALIZE_NUMPY
        | orjson.OPT_SORT_KEYS
        | orjson.OPT_INDENT_2
    )

    @classmethod
    def encode(cls, value: Any, *, indent: bool = True) -> bytes:
        """
        Encode a Python object to JSON bytes.

        Parameters
        ----------
        value : Any
            The Python object to be encoded.
        indent : bool, optional
            Pretty-print with two spaces, by default True. JSON Lines output
            passes False.

        Returns
        -------
        bytes
            The encoded JSON.
        """
        options = cls.OPTIONS if indent else cls.OPTIONS & ~orjson.OPT_INDENT_2
        if isinstance(value, BaseModel):
            value = value.model_dump(mode="json", by_alias=True)
        return orjson.dumps(value, default=_default, option=options)

    @classmethod
    def decode(cls, value: bytes | str) -> Any:
        """
        Decode JSON bytes to a Python object.

        Parameters
        ----------
        value : bytes | str
            The JSON bytes to be decoded.

        Returns
        -------
        Any
            The decoded Python object.
        """
        return orjson.loads(value)


def write_json(path: Path, value: Any) -> Path:
    """Write ``value`` as JSON to ``path``, creating parent directories."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ORJsonCoder.encode(value) + b"\n")
    return path


def read_json(path: Path) -> Any:
    """Read a JSON file."""
    return ORJsonCoder.decode(path.read_bytes())


def exit_with_error(exit_code: int, detail: str) -> NoReturn:
    """
    Log ``detail`` and terminate the process with ``exit_code``.

    Parameters
    ----------
    exit_code : int
        The process exit code (2 config, 3 data, 4 numeric).
    detail : str
        The message reported to the user.

    Raises
    ------
    SystemExit
        Always.
    """
    logger.error(detail)
    sys.exit(exit_code)
