"""A module to contain core helper functions for the program."""

import hashlib
from collections.abc import Mapping
from typing import Any

import numpy as np

from tblab.core.utils import ORJsonCoder


def stable_hash(value: Any, length: int = 16) -> str:
    """
    Hash any JSON-serializable value independently of key order.

    Examples
    --------
    >>> stable_hash({"b": 1, "a": 2}) == stable_hash({"a": 2, "b": 1})
    True
    """
    digest = hashlib.sha256(ORJsonCoder.encode(value, indent=False))
    return digest.hexdigest()[:length]


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict:
    """
    Merge ``override`` into ``base`` recursively; ``override`` wins.

    Examples
    --------
    >>> deep_merge({"a": {"x": 1, "y": 2}}, {"a": {"y": 3}})
    {'a': {'x': 1, 'y': 3}}
    """
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def derive_rng(seed: int, *salt: int | str) -> np.random.Generator:
    """
    Build a numpy Generator from a base seed and a salt path.

    Independent sub-streams (per edit, per purpose) get distinct salts so
    that adding a consumer never shifts another consumer's draws.
    """
    salt_ints = [
        s if isinstance(s, int) else int(stable_hash(s, length=8), 16)
        for s in salt
    ]
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, *salt_ints])
