"""Test parameter snapshots, target groups and checkpoints."""

from pathlib import Path

import numpy as np
import pytest

from tblab.core.standard_models.abstract.errors import ConfigError, DataError
from tblab.model.config import ModelConfig
from tblab.model.params import (
    Gradients,
    Parameters,
    init_parameters,
    load_checkpoint,
    parameter_shapes,
    save_checkpoint,
)


def test_snapshots_are_read_only(params: Parameters) -> None:
    """Test that snapshot tensors cannot be written in place."""
    with pytest.raises(ValueError, match="read-only"):
        params["tok_embed"][0, 0] = 1.0


def test_init_is_seeded(model_config: ModelConfig, params: Parameters) -> None:
    """Test that the same seed gives the same snapshot."""
    again = init_parameters(model_config)
    assert again.bitwise_equal(params)
    assert again.token != params.token
    assert again.shapes() == parameter_shapes(model_config)


def test_resolve_groups(params: Parameters, model_config: ModelConfig) -> None:
    """Test the D, V and DV target groups and explicit names."""
    d_group = params.resolve_group("D", model_config.n_layers)
    assert d_group == [
        "layers.2.mlp.fc_in.weight",
        "layers.2.mlp.fc_out.weight",
        "layers.3.mlp.fc_in.weight",
        "layers.3.mlp.fc_out.weight",
        "layers.4.mlp.fc_in.weight",
        "layers.4.mlp.fc_out.weight",
    ]
    assert params.resolve_group("V", model_config.n_layers) == [
        "image_proj.weight",
        "image_proj.bias",
    ]
    assert len(params.resolve_group("DV", model_config.n_layers)) == 8
    assert params.resolve_group(["unembed.bias"], model_config.n_layers) == ["unembed.bias"]
    with pytest.raises(ConfigError):
        params.resolve_group("layers.9.mlp.fc_in.weight", model_config.n_layers)
    with pytest.raises(ConfigError):
        params.resolve_group([], model_config.n_layers)


def test_replace_checks_names_and_shapes(params: Parameters) -> None:
    """Test that replace leaves the original alone and rejects bad updates."""
    updated = params.replace({"unembed.bias": params["unembed.bias"] + 1.0})
    assert not updated.bitwise_equal(params)
    assert np.array_equal(params["unembed.bias"], np.zeros_like(params["unembed.bias"]))
    assert updated.delta_norms(params)["tok_embed"] == 0.0
    with pytest.raises(KeyError):
        params.replace({"nope": np.zeros(1)})
    with pytest.raises(ValueError, match="shape mismatch"):
        params.replace({"unembed.bias": np.zeros(1)})


def test_gradients_restrict(params: Parameters) -> None:
    """Test that restrict zeroes every tensor outside the kept names."""
    grads = Gradients({name: np.ones_like(t) for name, t in params.items()})
    grads.restrict(["unembed.bias"])
    assert grads.global_norm() == pytest.approx(np.sqrt(params["unembed.bias"].size))


def test_checkpoint_round_trip(
    tmp_path: Path, params: Parameters, model_config: ModelConfig
) -> None:
    """Test that float32-rounded parameters survive a checkpoint exactly."""
    rounded = params.to_float32_precision()
    vocab = [f"tok{i}" for i in range(model_config.vocab_size)]
    path = save_checkpoint(tmp_path / "base.ckpt", rounded, model_config, vocab)
    loaded, config, tokens = load_checkpoint(path)
    assert loaded.bitwise_equal(rounded)
    assert config == model_config
    assert tokens == vocab


def test_checkpoint_rejects_garbage(tmp_path: Path) -> None:
    """Test that a file without the checkpoint header is a data error."""
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"abc")
    with pytest.raises(DataError):
        load_checkpoint(path)
