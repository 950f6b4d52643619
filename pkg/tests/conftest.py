"""Shared fixtures: a tiny world, its corpus and small model configs."""

import pytest

from tblab.data.world import Corpus, WorldConfig, generate_corpus
from tblab.model.config import ModelConfig
from tblab.model.params import Parameters, init_parameters


@pytest.fixture(scope="session")
def world() -> WorldConfig:
    return WorldConfig(
        n_objects=6, n_attributes=2, n_values=4, objects_per_image=2, n_records=80, seed=3
    )


@pytest.fixture(scope="session")
def corpus(world: WorldConfig) -> Corpus:
    return generate_corpus(world)


@pytest.fixture(scope="session")
def model_config(corpus: Corpus) -> ModelConfig:
    return ModelConfig(
        n_layers=4,
        d_model=16,
        n_heads=2,
        d_ff=32,
        vocab_size=len(corpus.vocab),
        n_image_tokens=2,
        max_text_tokens=8,
        image_feature_dim=corpus.world.feature_dim,
        seed=1,
    )


@pytest.fixture(scope="session")
def shallow_config(corpus: Corpus) -> ModelConfig:
    """Two layers, width 8: small enough for finite differences."""
    return ModelConfig(
        n_layers=2,
        d_model=8,
        n_heads=2,
        d_ff=16,
        vocab_size=len(corpus.vocab),
        n_image_tokens=2,
        max_text_tokens=8,
        image_feature_dim=corpus.world.feature_dim,
        seed=5,
        init_std=0.3,
        allow_shallow=True,
    )


@pytest.fixture(scope="session")
def params(model_config: ModelConfig) -> Parameters:
    return init_parameters(model_config)
