"""Test Distance scores and key-token extraction."""

import numpy as np
import pytest

from tblab.attribution.config import AttributionConfig
from tblab.attribution.key_tokens import distance_score, extract_key_tokens
from tblab.core.standard_models.abstract.errors import DegenerateState
from tblab.data.world import Corpus
from tblab.model.config import ModelConfig
from tblab.model.params import Parameters
from tblab.model.transformer import ForwardTrace, forward_with_trace


@pytest.fixture(scope="module")
def trace(corpus: Corpus, params: Parameters, model_config: ModelConfig) -> ForwardTrace:
    record = corpus.records[0]
    model_input = corpus.model_input(record.question, record.image)
    _, trace = forward_with_trace(
        params, model_input.image_features, model_input.text_ids, model_config
    )
    return trace


def test_distance_score_bounds() -> None:
    """Test that scores stay within [-1, 2] on random vectors."""
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, m, h_prev = rng.normal(size=(3, 8))
        score = distance_score(h_prev + a + m, a, m, h_prev)
        assert -1.0 <= score <= 2.0


def test_distance_score_degenerate() -> None:
    """Test that a state equal to all three components is undefined."""
    v = np.ones(4)
    with pytest.raises(DegenerateState):
        distance_score(v, v, v, v)
    with pytest.raises(ValueError, match="one shape"):
        distance_score(v, v, v, np.ones(3))


def test_accept_everything(trace: ForwardTrace, model_config: ModelConfig) -> None:
    """Test that gamma below -1 with full fan-out visits every position everywhere."""
    path = extract_key_tokens(trace, AttributionConfig(gamma=-1.0, top_k=model_config.seq_len))
    assert path.n_layers == model_config.n_layers
    everything = set(range(model_config.seq_len))
    for layer in range(1, model_config.n_layers + 1):
        tokens = path.layer(layer)
        assert tokens.positions == everything
        assert len(tokens.accepted) == model_config.seq_len
        assert len(tokens.queue) == model_config.seq_len


def test_accept_nothing(trace: ForwardTrace, model_config: ModelConfig) -> None:
    """Test that gamma above 2 stops at the output token of the top layer."""
    path = extract_key_tokens(trace, AttributionConfig(gamma=2.01))
    top = path.layer(model_config.n_layers)
    assert top.positions == {model_config.seq_len - 1}
    assert top.accepted == []
    for layer in range(1, model_config.n_layers):
        assert path.layer(layer).queue == []
    assert path.edges == []


def test_edges_explain_every_queued_token(trace: ForwardTrace, model_config: ModelConfig) -> None:
    """Test that each queued token except the output has exactly one incoming edge."""
    path = extract_key_tokens(trace, AttributionConfig(gamma=0.5, top_k=3))
    incoming: dict[tuple[int, int], int] = {}
    for edge in path.edges:
        key = (edge.target_layer, edge.target)
        incoming[key] = incoming.get(key, 0) + 1
        if edge.kind == "seed":
            assert edge.target_layer == edge.layer - 1
            assert edge.target == edge.source
        else:
            assert edge.kind == "topk"
            assert edge.target_layer == edge.layer
    output = (model_config.n_layers, model_config.seq_len - 1)
    for layer_tokens in path.layers:
        for token in layer_tokens.queue:
            key = (layer_tokens.layer, token.position)
            assert incoming.get(key, 0) == (0 if key == output else 1)
    for layer_tokens in path.layers:
        assert all(token.accepted == (token.score >= 0.5) for token in layer_tokens.queue)
        assert len(layer_tokens.queue) <= model_config.seq_len


def test_distance_score_ignores_positive_scale() -> None:
    """Test that scaling all four vectors by one positive factor keeps the score."""
    rng = np.random.default_rng(5)
    for _ in range(200):
        a, m, h_prev = rng.normal(size=(3, 8))
        h = h_prev + a + m
        scale = float(rng.uniform(1e-3, 1e3))
        assert distance_score(scale * h, scale * a, scale * m, scale * h_prev) == pytest.approx(
            distance_score(h, a, m, h_prev), abs=1e-12
        )


def test_raising_gamma_never_adds_key_tokens(
    corpus: Corpus, params: Parameters, model_config: ModelConfig
) -> None:
    """Test that every layer's key tokens shrink as the threshold rises."""
    gammas = np.linspace(-1.0, 2.0, 13)
    for record in corpus.records[:5]:
        x = corpus.model_input(record.question, record.image)
        _, trace = forward_with_trace(params, x.image_features, x.text_ids, model_config)
        paths = [extract_key_tokens(trace, AttributionConfig(gamma=float(g), top_k=2)) for g in gammas]
        for looser, stricter in zip(paths, paths[1:]):
            for layer in range(1, model_config.n_layers + 1):
                assert stricter.layer(layer).positions <= looser.layer(layer).positions
                kept = {t.position for t in stricter.layer(layer).accepted}
                assert kept <= {t.position for t in looser.layer(layer).accepted}
