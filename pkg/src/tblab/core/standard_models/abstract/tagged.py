"""Tagged models: objects identified by a uuid7 id.

Run manifests are the only tblab outputs carrying an id and a wall-clock
timestamp; everything else a run writes is deterministic.
"""

import datetime as dt

from pydantic import BaseModel, ConfigDict, Field
from uuid_extensions import uuid7str

from tblab.core.constants import MANIFEST_FORMAT


class Tagged(BaseModel):
    """A class to represent a tagged object."""

    model_config = ConfigDict(populate_by_name=True)

    id: str = Field(default_factory=uuid7str, alias="_id")


class RunManifest(Tagged):
    """Manifest of one run directory."""

    format: str = MANIFEST_FORMAT
    command: str
    config_hash: str
    seed: int
    created_at: str = Field(
        default_factory=lambda: dt.datetime.now(tz=dt.UTC).isoformat()
    )
    files: list[str] = Field(default_factory=list)
    failures: dict[str, str] = Field(default_factory=dict)
    exit_code: int = 0
