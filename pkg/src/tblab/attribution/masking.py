"""Masking sweep: accuracy kept when only key tokens survive in the top layers."""

import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from tblab.attribution.config import AttributionConfig, KeepMode
from tblab.attribution.key_tokens import KeyTokenPath
from tblab.core.standard_models.abstract.errors import DataError, InvalidMask
from tblab.model.config import ModelConfig
from tblab.model.params import Parameters
from tblab.model.transformer import ModelInput, forward_masked, predict_batch


class LayerRange(BaseModel):
    """Layer suffix ``[start, end]`` (1-based); ``start > end`` is the empty range."""

    model_config = ConfigDict(frozen=True)

    start: int
    end: int

    @model_validator(mode="after")
    def _check(self) -> "LayerRange":
        if self.start < 1:
            msg = f"layer range must start at 1 or above, got {self.start}"
            raise ValueError(msg)
        return self

    @property
    def is_empty(self) -> bool:
        return self.start > self.end

    @property
    def layers(self) -> range:
        return range(self.start, self.end + 1)

    @property
    def label(self) -> str:
        return "none" if self.is_empty else f"{self.start}-{self.end}"


def default_layer_ranges(n_layers: int, stride: int | None = None) -> list[LayerRange]:
    """
    Suffixes growing by ``stride`` layers (default ``ceil(L / 8)``) down to layer 1.

    Examples
    --------
    >>> [r.label for r in default_layer_ranges(4)]
    ['4-4', '3-4', '2-4', '1-4']
    >>> [r.label for r in default_layer_ranges(32, stride=4)][:2]
    ['29-32', '25-32']
    """
    stride = stride or math.ceil(n_layers / 8)
    ranges: list[LayerRange] = []
    start = n_layers - stride + 1
    while True:
        clipped = max(start, 1)
        if not ranges or ranges[-1].start != clipped:
            ranges.append(LayerRange(start=clipped, end=n_layers))
        if clipped == 1:
            return ranges
        start -= stride


def mask_plan_for(
    path: KeyTokenPath, layer_range: LayerRange, keep_mode: KeepMode
) -> dict[int, set[int]]:
    """Positions to suppress per layer of ``layer_range``: every non-key token."""
    output = path.seq_len - 1
    everything = set(range(path.seq_len))
    if keep_mode is KeepMode.UNION:
        keep = set().union(*(path.layer(layer).positions for layer in layer_range.layers))
        return {layer: everything - keep - {output} for layer in layer_range.layers}
    return {
        layer: everything - path.layer(layer).positions - {output}
        for layer in layer_range.layers
    }


class MaskSweepRow(BaseModel):
    layer_range: str
    start: int
    end: int
    accuracy: float
    unmasked_accuracy: float
    fraction: float


def mask_sweep(
    params: Parameters,
    inputs: Sequence[ModelInput],
    labels: Sequence[int],
    paths: Sequence[KeyTokenPath],
    layer_ranges: Sequence[LayerRange],
    model_config: ModelConfig,
    config: AttributionConfig,
) -> list[MaskSweepRow]:
    """
    Retained-accuracy fraction per layer range.

    For each range, every input is re-run with its non-key tokens zeroed at
    the range's layers and its accuracy divided by the unmasked accuracy.
    When the unmasked accuracy is zero the fraction is reported as 1.0 if
    masking changed nothing and 0.0 otherwise.

    Raises
    ------
    DataError
        If inputs, labels and paths differ in length.
    InvalidMask
        If a range leaves the model's layers.
    """
    if not (len(inputs) == len(labels) == len(paths)) or not inputs:
        msg = "mask_sweep needs one label and one key-token path per input"
        raise DataError(msg)
    label_ids = np.asarray(labels)
    unmasked = predict_batch(params, inputs, model_config).argmax(axis=-1)
    unmasked_accuracy = float(np.mean(unmasked == label_ids))

    rows = []
    for layer_range in layer_ranges:
        if not layer_range.is_empty and layer_range.end > model_config.n_layers:
            msg = f"layer range {layer_range.label} exceeds {model_config.n_layers} layers"
            raise InvalidMask(msg)
        if layer_range.is_empty:
            predicted = unmasked
        else:
            predicted = np.array(
                [
                    int(
                        forward_masked(
                            params,
                            model_input,
                            mask_plan_for(path, layer_range, config.keep_mode),
                            model_config,
                        ).argmax()
                    )
                    for model_input, path in zip(inputs, paths, strict=True)
                ]
            )
        accuracy = float(np.mean(predicted == label_ids))
        if unmasked_accuracy > 0:
            fraction = accuracy / unmasked_accuracy
        else:
            fraction = 1.0 if np.array_equal(predicted, unmasked) else 0.0
        rows.append(
            MaskSweepRow(
                layer_range=layer_range.label,
                start=layer_range.start,
                end=layer_range.end,
                accuracy=accuracy,
                unmasked_accuracy=unmasked_accuracy,
                fraction=fraction,
            )
        )
    return rows
