"""JSON Lines corpus files.

The first line is a header carrying the format version and the world the
records were generated from; every following line is one edit record.
"""

from pathlib import Path

import orjson

from tblab.core.constants import CORPUS_FORMAT
from tblab.core.env import Env
from tblab.core.logger import setup_logger
from tblab.core.standard_models.abstract.errors import DataError
from tblab.core.utils import ORJsonCoder
from tblab.data.world import Corpus, EditRecord, WorldConfig

logger = setup_logger("tblab.data.io", level=Env().LOGGER_LEVEL)


def save_corpus(corpus: Corpus, path: Path) -> Path:
    """Write ``corpus`` as JSON Lines; equal corpora give byte-identical files."""
    lines = [
        ORJsonCoder.encode(
            {"format": CORPUS_FORMAT, "kind": "header", "world": corpus.world},
            indent=False,
        )
    ]
    for record in corpus.records:
        body = record.model_dump(mode="json")
        body["format"] = CORPUS_FORMAT
        lines.append(ORJsonCoder.encode(body, indent=False))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"\n".join(lines) + b"\n")
    logger.info(f"wrote {len(corpus)} records to {path}")
    return path


def load_corpus(path: Path) -> Corpus:
    """
    Read a corpus written by :func:`save_corpus`.

    Raises
    ------
    DataError
        On a missing header, a wrong format version or an invalid record.
    """
    if not path.is_file():
        msg = f"corpus file {path} does not exist"
        raise DataError(msg)
    lines = [line for line in path.read_bytes().splitlines() if line.strip()]
    if not lines:
        msg = f"{path} is empty"
        raise DataError(msg)
    try:
        header = ORJsonCoder.decode(lines[0])
    except orjson.JSONDecodeError as e:
        msg = f"{path}: not a JSON Lines corpus"
        raise DataError(msg) from e
    if (
        not isinstance(header, dict)
        or header.get("kind") != "header"
        or header.get("format") != CORPUS_FORMAT
    ):
        msg = f"{path}: expected a {CORPUS_FORMAT} header line"
        raise DataError(msg)
    records = []
    try:
        world = WorldConfig(**header["world"])
        for number, line in enumerate(lines[1:], start=2):
            body = ORJsonCoder.decode(line)
            if body.pop("format", None) != CORPUS_FORMAT:
                msg = f"{path}:{number}: unsupported record format"
                raise DataError(msg)
            records.append(EditRecord(**body))
        return Corpus(world=world, records=records)
    except (ValueError, KeyError, TypeError) as e:  # ValidationError is a ValueError
        raise DataError(e) from e
