from typing import Generic, TypeVar

from pydantic import BaseModel, Field

T = TypeVar("T")

# Generic typing is used here to specify the type of the payload.
# Envelope[MetricReport] is a metric report file, Envelope[KeyTokenPath] a
# trace file, and so on. Every file tblab writes is one of these, so the
# format version, config hash and seed always sit next to the numbers.


class Envelope(BaseModel, Generic[T]):
    format: str = Field(description="Format version of the payload")
    config_hash: str = Field(description="Hash of the numerics-affecting config")
    seed: int = Field(description="Seed the payload was produced with")
    payload: T
