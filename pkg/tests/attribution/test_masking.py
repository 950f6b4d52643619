"""Test layer ranges, mask plans and the masking sweep."""

import numpy as np
import pytest

from tblab.attribution.config import AttributionConfig, KeepMode
from tblab.attribution.key_tokens import KeyTokenPath, extract_key_tokens
from tblab.attribution.masking import (
    LayerRange,
    default_layer_ranges,
    mask_plan_for,
    mask_sweep,
)
from tblab.core.standard_models.abstract.errors import DataError, InvalidMask
from tblab.data.world import Corpus
from tblab.model.config import ModelConfig
from tblab.model.params import Parameters
from tblab.model.transformer import ModelInput, forward_masked, forward_with_trace


def _paths(
    corpus: Corpus, params: Parameters, model_config: ModelConfig, config: AttributionConfig
) -> tuple[list[ModelInput], list[int], list[KeyTokenPath]]:
    inputs, labels, paths = [], [], []
    for record in corpus.records[:4]:
        model_input = corpus.model_input(record.question, record.image)
        _, trace = forward_with_trace(
            params, model_input.image_features, model_input.text_ids, model_config
        )
        inputs.append(model_input)
        labels.append(corpus.vocab.id(record.answer))
        paths.append(extract_key_tokens(trace, config))
    return inputs, labels, paths


def test_default_ranges() -> None:
    """Test suffix ranges for shallow, deep and strided models."""
    assert [r.label for r in default_layer_ranges(12, stride=5)] == ["8-12", "3-12", "1-12"]
    ranges = default_layer_ranges(32)
    assert ranges[0].label == "29-32"
    assert ranges[-1].label == "1-32"
    assert len(ranges) == 8
    assert LayerRange(start=3, end=2).label == "none"
    with pytest.raises(ValueError, match="start at 1"):
        LayerRange(start=0, end=2)


def test_mask_plan_keeps_output_and_key_tokens(
    corpus: Corpus, params: Parameters, model_config: ModelConfig
) -> None:
    """Test that plans never suppress the output or a key token."""
    config = AttributionConfig(gamma=0.5, top_k=2)
    _, _, paths = _paths(corpus, params, model_config, config)
    path = paths[0]
    layer_range = LayerRange(start=3, end=4)
    plan = mask_plan_for(path, layer_range, KeepMode.LAYER)
    assert set(plan) == {3, 4}
    for layer, suppressed in plan.items():
        assert model_config.seq_len - 1 not in suppressed
        assert not suppressed & path.layer(layer).positions
    union = mask_plan_for(path, layer_range, KeepMode.UNION)
    kept = path.layer(3).positions | path.layer(4).positions
    assert union[3] == union[4] == set(range(model_config.seq_len)) - kept - {model_config.seq_len - 1}


def test_sweep_with_every_token_kept(
    corpus: Corpus, params: Parameters, model_config: ModelConfig
) -> None:
    """Test that keeping every position retains all of the accuracy."""
    config = AttributionConfig(gamma=-1.0, top_k=model_config.seq_len)
    inputs, labels, paths = _paths(corpus, params, model_config, config)
    ranges = default_layer_ranges(model_config.n_layers)
    rows = mask_sweep(params, inputs, labels, paths, ranges, model_config, config)
    assert [row.layer_range for row in rows] == ["4-4", "3-4", "2-4", "1-4"]
    assert all(row.fraction == 1.0 for row in rows)
    assert len({row.unmasked_accuracy for row in rows}) == 1


def test_sweep_rejects_bad_inputs(
    corpus: Corpus, params: Parameters, model_config: ModelConfig
) -> None:
    """Test mismatched lengths and out-of-model ranges."""
    config = AttributionConfig()
    inputs, labels, paths = _paths(corpus, params, model_config, config)
    with pytest.raises(DataError):
        mask_sweep(params, inputs, labels[:2], paths, [], model_config, config)
    with pytest.raises(InvalidMask):
        mask_sweep(
            params, inputs, labels, paths, [LayerRange(start=2, end=9)], model_config, config
        )
    empty = mask_sweep(
        params, inputs, labels, paths, [LayerRange(start=5, end=4)], model_config, config
    )
    assert empty[0].fraction == 1.0


def test_masking_every_other_token_leaves_one_answer(
    corpus: Corpus, params: Parameters, model_config: ModelConfig
) -> None:
    """Test that with only the shared answer slot left, same-form questions get one answer."""
    plan = {
        layer: set(range(model_config.seq_len - 1))
        for layer in range(1, model_config.n_layers + 1)
    }
    records = corpus.records[:12]
    probs = [
        forward_masked(params, corpus.model_input(r.question, r.image), plan, model_config)
        for r in records
    ]
    for other in probs[1:]:
        np.testing.assert_allclose(other, probs[0], atol=1e-12)
