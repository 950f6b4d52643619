"""Parameter snapshots, gradients and checkpoint I/O.

A :class:`Parameters` object is an immutable snapshot: its arrays are
read-only and every update goes through :meth:`Parameters.replace`, which
returns a new snapshot. Forward and backward passes may share one snapshot
from any number of threads.
"""

import itertools
import struct
from collections.abc import Iterable, Iterator, Mapping
from pathlib import Path

import numpy as np
import orjson

from tblab.core.constants import CHECKPOINT_FORMAT
from tblab.core.standard_models.abstract.errors import ConfigError, DataError
from tblab.core.utils import ORJsonCoder
from tblab.model.config import ModelConfig

_snapshot_counter = itertools.count()

PARAMETER_GROUPS = ("D", "V", "DV")


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every trainable tensor, in checkpoint order."""
    d, m, v = config.d_model, config.n_image_tokens, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "image_proj.weight": (config.image_feature_dim, m * d),
        "image_proj.bias": (m * d,),
        "null_image": (m, d),
        "tok_embed": (v, d),
        "pos_embed": (config.seq_len, d),
    }
    for layer in range(1, config.n_layers + 1):
        prefix = f"layers.{layer}"
        shapes[f"{prefix}.norm.gain"] = (d,)
        for proj in ("q", "k", "v", "o"):
            shapes[f"{prefix}.attn.{proj}.weight"] = (d, d)
        shapes[f"{prefix}.mlp.fc_in.weight"] = (d, config.d_ff)
        shapes[f"{prefix}.mlp.fc_in.bias"] = (config.d_ff,)
        shapes[f"{prefix}.mlp.fc_out.weight"] = (config.d_ff, d)
        shapes[f"{prefix}.mlp.fc_out.bias"] = (d,)
    shapes["final_norm.gain"] = (d,)
    shapes["unembed.weight"] = (d, v)
    shapes["unembed.bias"] = (v,)
    return shapes


class TensorMap(Mapping[str, np.ndarray]):
    """Ordered name -> float64 array mapping shared by parameters and gradients."""

    __slots__ = ("_tensors",)

    def __init__(self, tensors: Mapping[str, np.ndarray]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: t.shape for name, t in self._tensors.items()}

    def is_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self._tensors.values())

    def global_norm(self) -> float:
        return float(
            np.sqrt(sum(float(np.sum(t * t)) for t in self._tensors.values()))
        )


class Parameters(TensorMap):
    """Immutable snapshot of the model parameters (``theta``)."""

    __slots__ = ("token",)

    def __init__(self, tensors: Mapping[str, np.ndarray]):
        frozen = {}
        for name, tensor in tensors.items():
            array = np.array(tensor, dtype=np.float64, copy=True)
            array.flags.writeable = False
            frozen[name] = array
        super().__init__(frozen)
        # Identity of this snapshot; traces remember it.
        self.token = next(_snapshot_counter)

    def replace(self, updates: Mapping[str, np.ndarray]) -> "Parameters":
        """Return a new snapshot with ``updates`` swapped in."""
        unknown = set(updates) - set(self._tensors)
        if unknown:
            msg = f"unknown parameter names: {sorted(unknown)}"
            raise KeyError(msg)
        merged = dict(self._tensors)
        for name, value in updates.items():
            if value.shape != merged[name].shape:
                msg = f"shape mismatch for {name}: {value.shape} != {merged[name].shape}"
                raise ValueError(msg)
            merged[name] = value
        return Parameters(merged)

    def clone(self) -> "Parameters":
        return Parameters(self._tensors)

    def to_float32_precision(self) -> "Parameters":
        """Round every tensor to float32 so checkpoint round-trips are exact."""
        return Parameters(
            {
                name: t.astype(np.float32).astype(np.float64)
                for name, t in self._tensors.items()
            }
        )

    def delta_norms(self, other: "Parameters") -> dict[str, float]:
        """Frobenius norm of ``other - self`` per tensor."""
        return {
            name: float(np.linalg.norm(other[name] - tensor))
            for name, tensor in self._tensors.items()
        }

    def bitwise_equal(self, other: "Parameters") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(t, other[name]) for name, t in self._tensors.items()
        )

    def resolve_group(self, spec: str | Iterable[str], n_layers: int) -> list[str]:
        """
        Resolve a target-parameter spec to tensor names.

        Parameters
        ----------
        spec : str | Iterable[str]
            ``"D"`` (MLP weights of the top three layers), ``"V"`` (image
            projection), ``"DV"`` (their union) or explicit tensor names.
        n_layers : int
            Model depth ``L``.

        Returns
        -------
        list[str]
            Tensor names, in snapshot order.

        Raises
        ------
        ConfigError
            If the spec is empty or names an unknown tensor.
        """
        if isinstance(spec, str) and spec in PARAMETER_GROUPS:
            wanted: set[str] = set()
            if "D" in spec:
                for layer in range(max(1, n_layers - 2), n_layers + 1):
                    wanted.add(f"layers.{layer}.mlp.fc_in.weight")
                    wanted.add(f"layers.{layer}.mlp.fc_out.weight")
            if "V" in spec:
                wanted |= {"image_proj.weight", "image_proj.bias"}
        else:
            wanted = {spec} if isinstance(spec, str) else set(spec)
        unknown = wanted - set(self._tensors)
        if not wanted or unknown:
            msg = f"invalid target parameters {spec!r} (unknown: {sorted(unknown)})"
            raise ConfigError(msg)
        return [name for name in self._tensors if name in wanted]


class Gradients(TensorMap):
    """Mutable gradient accumulator mirroring :class:`Parameters`."""

    __slots__ = ()

    @classmethod
    def zeros_like(cls, params: Parameters) -> "Gradients":
        return cls({name: np.zeros_like(t) for name, t in params.items()})

    def add_(self, other: "Gradients", scale: float = 1.0) -> "Gradients":
        for name, tensor in other.items():
            self._tensors[name] += scale * tensor
        return self

    def restrict(self, names: Iterable[str]) -> "Gradients":
        """Zero every tensor not in ``names``."""
        keep = set(names)
        for name, tensor in self._tensors.items():
            if name not in keep:
                tensor[...] = 0.0
        return self


def init_parameters(config: ModelConfig) -> Parameters:
    """Seeded initialisation: N(0, init_std) weights, unit norm gains, zero biases."""
    rng = np.random.default_rng(config.seed)
    std = config.init_std
    residual_std = std / np.sqrt(2 * config.n_layers)
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            tensors[name] = np.ones(shape)
        elif name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
        elif name.endswith(("attn.o.weight", "fc_out.weight")):
            tensors[name] = rng.normal(0.0, residual_std, size=shape)
        elif name == "image_proj.weight":
            tensors[name] = rng.normal(
                0.0, 1.0 / np.sqrt(config.image_feature_dim), size=shape
            )
        elif name in {"tok_embed", "pos_embed", "null_image"}:
            tensors[name] = rng.normal(0.0, 1.0, size=shape)
        else:
            tensors[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
    return Parameters(tensors)


def save_checkpoint(
    path: Path,
    params: Parameters,
    config: ModelConfig,
    vocab: list[str],
) -> Path:
    """
    Write a ``tb-ckpt-1`` checkpoint.

    Layout: 8-byte little-endian header length, JSON header (format, model
    config, vocabulary, tensor manifest), then every tensor as little-endian
    float32 in manifest order.
    """
    if not params.is_finite():
        msg = "refusing to save non-finite parameters"
        raise DataError(msg)
    manifest = []
    offset = 0
    blobs = []
    for name, tensor in params.items():
        blob = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        offset += len(blob)
        blobs.append(blob)
    header = ORJsonCoder.encode(
        {
            "format": CHECKPOINT_FORMAT,
            "config": config.model_dump(mode="json"),
            "vocab": vocab,
            "tensors": manifest,
        },
        indent=False,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(struct.pack("<Q", len(header)))
        handle.write(header)
        for blob in blobs:
            handle.write(blob)
    return path


def load_checkpoint(path: Path) -> tuple[Parameters, ModelConfig, list[str]]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    raw = path.read_bytes()
    if len(raw) < 8:
        msg = f"{path} is not a checkpoint"
        raise DataError(msg)
    (header_len,) = struct.unpack("<Q", raw[:8])
    try:
        header = ORJsonCoder.decode(raw[8 : 8 + header_len])
    except orjson.JSONDecodeError as e:
        msg = f"{path}: unreadable checkpoint header"
        raise DataError(msg) from e
    if not isinstance(header, dict) or header.get("format") != CHECKPOINT_FORMAT:
        found = header.get("format") if isinstance(header, dict) else None
        msg = f"{path}: unsupported checkpoint format {found!r}"
        raise DataError(msg)
    try:
        config = ModelConfig(**header["config"])
        data = raw[8 + header_len :]
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            chunk = np.frombuffer(data, dtype="<f4", count=count, offset=start)
            tensors[entry["name"]] = chunk.reshape(shape).astype(np.float64)
    except (KeyError, ValueError) as e:
        msg = f"{path}: corrupt checkpoint ({e})"
        raise DataError(msg) from e
    expected = parameter_shapes(config)
    if {k: tuple(v.shape) for k, v in tensors.items()} != expected:
        msg = f"{path}: tensor manifest does not match the model config"
        raise DataError(msg)
    return Parameters(tensors), config, list(header["vocab"])
