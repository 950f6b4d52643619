"""Test the forward and backward passes of the subject transformer."""

import numpy as np
import pytest

from tblab.core.standard_models.abstract.errors import (
    InvalidMask,
    InvalidToken,
    NumericalOverflow,
    TraceMismatch,
)
from tblab.data.world import Corpus
from tblab.model.config import ModelConfig
from tblab.model.params import Parameters, init_parameters
from tblab.model.transformer import (
    attention_mask,
    backward,
    forward_masked,
    forward_with_trace,
    pad_text,
)


def _query(corpus: Corpus, index: int = 0, with_image: bool = True):
    record = corpus.records[index]
    model_input = corpus.model_input(record.question, record.image if with_image else None)
    return model_input.image_features, model_input.text_ids


def _nll(params: Parameters, features, tokens, target: int, config: ModelConfig) -> float:
    probs, _ = forward_with_trace(params, features, tokens, config)
    return float(-np.log(probs[target]))


def test_attention_mask_image_prefix_is_bidirectional(model_config: ModelConfig) -> None:
    """Test that image positions see each other and text is causal over text."""
    mask = attention_mask(model_config)
    m = model_config.n_image_tokens
    assert mask[:m, :m].all()
    assert not mask[:m, m:].any()
    assert mask[m:, :m].all()
    text = mask[m:, m:]
    assert np.array_equal(text, np.tril(np.ones_like(text)))


def test_pad_text_left_pads(model_config: ModelConfig) -> None:
    """Test that questions are left-padded so the last token sits at N - 1."""
    padded = pad_text([5, 6, 7], model_config)
    assert padded.tolist()[-3:] == [5, 6, 7]
    assert set(padded.tolist()[:-3]) == {0}
    with pytest.raises(InvalidToken):
        pad_text([model_config.vocab_size], model_config)


def test_residual_decomposition(corpus: Corpus, params: Parameters, model_config: ModelConfig) -> None:
    """Test that h equals h_prev + a + m at every layer and position."""
    features, tokens = _query(corpus)
    probs, trace = forward_with_trace(params, features, tokens, model_config)
    assert trace.n_layers == model_config.n_layers
    assert trace.seq_len == model_config.seq_len
    rebuilt = trace.h_prev + trace.attn_out + trace.mlp_out
    scale = np.maximum(np.abs(trace.h_new), 1.0)
    assert np.max(np.abs(rebuilt - trace.h_new) / scale) <= 1e-5
    assert np.allclose(trace.attention.sum(axis=-1), 1.0)
    assert probs.sum() == pytest.approx(1.0)


def test_zero_branches_are_identity(corpus: Corpus, params: Parameters, model_config: ModelConfig) -> None:
    """Test that a layer with zero output weights passes its input through."""
    zeroed = params.replace(
        {
            "layers.2.attn.o.weight": np.zeros_like(params["layers.2.attn.o.weight"]),
            "layers.2.mlp.fc_out.weight": np.zeros_like(params["layers.2.mlp.fc_out.weight"]),
            "layers.2.mlp.fc_out.bias": np.zeros_like(params["layers.2.mlp.fc_out.bias"]),
        }
    )
    features, tokens = _query(corpus)
    _, trace = forward_with_trace(zeroed, features, tokens, model_config)
    assert np.array_equal(trace.h_new[1], trace.h_prev[1])


def test_forward_is_deterministic(corpus: Corpus, params: Parameters, model_config: ModelConfig) -> None:
    """Test that repeated forward passes are bitwise identical."""
    features, tokens = _query(corpus, 3)
    first, _ = forward_with_trace(params, features, tokens, model_config)
    second, _ = forward_with_trace(params, features, tokens, model_config)
    assert np.array_equal(first, second)


def test_absent_image_uses_null_embedding(corpus: Corpus, params: Parameters, model_config: ModelConfig) -> None:
    """Test that an absent image ignores the image projection."""
    _, tokens = _query(corpus)
    changed = params.replace({"image_proj.bias": params["image_proj.bias"] + 1.0})
    before, _ = forward_with_trace(params, None, tokens, model_config)
    after, _ = forward_with_trace(changed, None, tokens, model_config)
    assert np.array_equal(before, after)


def test_backward_matches_finite_differences(corpus: Corpus, shallow_config: ModelConfig) -> None:
    """Test analytic gradients against central differences on a two-layer model."""
    params = init_parameters(shallow_config)
    features, tokens = _query(corpus, 1)
    target = 4
    _, trace = forward_with_trace(params, features, tokens, shallow_config)
    grads = backward(params, trace, target, shallow_config)

    rng = np.random.default_rng(0)
    h = 1e-5
    checked = [
        "image_proj.weight",
        "null_image",
        "tok_embed",
        "pos_embed",
        "layers.1.norm.gain",
        "layers.1.attn.q.weight",
        "layers.1.attn.k.weight",
        "layers.1.attn.v.weight",
        "layers.2.attn.o.weight",
        "layers.2.mlp.fc_in.weight",
        "layers.2.mlp.fc_in.bias",
        "layers.2.mlp.fc_out.weight",
        "final_norm.gain",
        "unembed.weight",
        "unembed.bias",
    ]
    for name in checked:
        tensor = params[name]
        for _ in range(3):
            index = tuple(int(rng.integers(s)) for s in tensor.shape)
            if name == "tok_embed":
                index = (tokens[-1], *index[1:])
            plus, minus = tensor.copy(), tensor.copy()
            plus[index] += h
            minus[index] -= h
            numeric = (
                _nll(params.replace({name: plus}), features, tokens, target, shallow_config)
                - _nll(params.replace({name: minus}), features, tokens, target, shallow_config)
            ) / (2 * h)
            analytic = grads[name][index]
            assert abs(analytic - numeric) <= 1e-3 * max(abs(numeric), abs(analytic)) + 1e-7, name


def test_backward_rejects_foreign_trace(corpus: Corpus, params: Parameters, model_config: ModelConfig) -> None:
    """Test that a trace is only differentiated with its own snapshot."""
    features, tokens = _query(corpus)
    _, trace = forward_with_trace(params, features, tokens, model_config)
    with pytest.raises(TraceMismatch):
        backward(params.clone(), trace, 0, model_config)


def test_non_finite_activation_raises(corpus: Corpus, params: Parameters, model_config: ModelConfig) -> None:
    """Test that a NaN in the embeddings is reported with its layer and position."""
    pos = params["pos_embed"].copy()
    pos[3, 0] = np.nan
    broken = params.replace({"pos_embed": pos})
    features, tokens = _query(corpus)
    with pytest.raises(NumericalOverflow) as info:
        forward_with_trace(broken, features, tokens, model_config)
    assert info.value.layer == 0
    assert info.value.position == 3


def test_empty_mask_plan_is_plain_forward(corpus: Corpus, params: Parameters, model_config: ModelConfig) -> None:
    """Test that masking nothing reproduces the unmasked pass bitwise."""
    features, tokens = _query(corpus, 2)
    model_input = corpus.model_input(corpus.records[2].question, corpus.records[2].image)
    probs, _ = forward_with_trace(params, features, tokens, model_config)
    assert np.array_equal(forward_masked(params, model_input, {}, model_config), probs)


def test_mask_plan_changes_output(corpus: Corpus, params: Parameters, model_config: ModelConfig) -> None:
    """Test that zeroing positions at the top layer changes the answer distribution."""
    record = corpus.records[2]
    model_input = corpus.model_input(record.question, record.image)
    plain = forward_masked(params, model_input, {}, model_config)
    masked = forward_masked(
        params, model_input, {model_config.n_layers: set(range(model_config.seq_len - 1))}, model_config
    )
    assert not np.array_equal(plain, masked)


def test_mask_plan_cannot_suppress_output(corpus: Corpus, params: Parameters, model_config: ModelConfig) -> None:
    """Test that the output position can never be masked."""
    record = corpus.records[0]
    model_input = corpus.model_input(record.question, record.image)
    with pytest.raises(InvalidMask):
        forward_masked(params, model_input, {1: {model_config.seq_len - 1}}, model_config)
    with pytest.raises(InvalidMask):
        forward_masked(params, model_input, {model_config.n_layers + 1: {0}}, model_config)
