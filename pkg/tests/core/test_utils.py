"""Test serialization, hashing, seeded streams and envelopes."""

from pathlib import Path

import numpy as np

from tblab.core.helpers import derive_rng, stable_hash
from tblab.core.standard_models.abstract.responses import Envelope
from tblab.core.standard_models.abstract.tagged import RunManifest
from tblab.core.utils import ORJsonCoder, read_json, write_json


def test_encoding_is_canonical(tmp_path: Path) -> None:
    """Test sorted keys, numpy values and byte-identical rewrites."""
    value = {"b": np.float64(0.5), "a": np.arange(3), "c": (1, 2), "d": Path("x")}
    first = write_json(tmp_path / "a.json", value)
    second = write_json(tmp_path / "b.json", dict(reversed(value.items())))
    assert first.read_bytes() == second.read_bytes()
    assert read_json(first) == {"a": [0, 1, 2], "b": 0.5, "c": [1, 2], "d": "x"}
    assert b"\n" not in ORJsonCoder.encode(value, indent=False)


def test_derived_streams_are_independent() -> None:
    """Test that salts separate streams and repeat exactly."""
    first = derive_rng(3, 7, "sets").random(4)
    assert np.array_equal(first, derive_rng(3, 7, "sets").random(4))
    assert not np.array_equal(first, derive_rng(3, 8, "sets").random(4))
    assert not np.array_equal(first, derive_rng(3, 7, "adversarial").random(4))
    assert stable_hash([1, 2]) != stable_hash([2, 1])


def test_envelope_and_manifest() -> None:
    """Test the typed envelope and the manifest id alias."""
    envelope = Envelope[dict](format="tb-report-1", config_hash="abc", seed=0, payload={"x": 1})
    decoded = ORJsonCoder.decode(ORJsonCoder.encode(envelope))
    assert decoded == {"config_hash": "abc", "format": "tb-report-1", "payload": {"x": 1}, "seed": 0}
    manifest = RunManifest(command="pipeline", config_hash="abc", seed=0)
    dumped = ORJsonCoder.decode(ORJsonCoder.encode(manifest))
    assert dumped["_id"] == manifest.id
    assert dumped["format"] == "tb-manifest-1"
