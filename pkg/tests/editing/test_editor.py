"""Test editor presets, adversarial batches and the editing loop."""

import numpy as np
import pytest

from tblab.core.standard_models.abstract.errors import (
    ConfigError,
    DidNotConverge,
    NonFiniteLoss,
    TBLabError,
)
from tblab.data.sampling import build_grid, sample_sets
from tblab.data.world import Corpus, records_disjoint
from tblab.editing.batch import build_adversarial_batch
from tblab.editing.config import EDITOR_PRESETS, EditorConfig, LossType
from tblab.editing.editor import apply_edit
from tblab.editing.losses import CompositeObjective, LossTerms
from tblab.model.config import ModelConfig
from tblab.model.params import Parameters, init_parameters
from tblab.model.transformer import predict_batch


def test_presets() -> None:
    """Test the two presets, overrides and unknown names."""
    assert EditorConfig.preset("composite").lambdas == (0.1, 1.0, 1.0)
    custom = EditorConfig.preset("edit-only", lambdas=(1.0, 0.5, 0.0), max_steps=3)
    assert custom.name == "edit-only"
    assert custom.lambdas == (1.0, 0.5, 0.0)
    assert custom.max_steps == 3
    with pytest.raises(ConfigError):
        EditorConfig.preset("rome")
    with pytest.raises(ValueError, match="nonnegative"):
        EditorConfig(lambdas=(1.0, -1.0, 0.0))


def test_loss_combination_is_deduplicated() -> None:
    """Test that repeated loss types collapse to canonical order."""
    config = EditorConfig(loss_combination=["CI", "RI", "CI"])
    assert config.loss_combination == [LossType.RI, LossType.CI]
    assert EditorConfig(loss_combination=[]).loss_combination == []


def test_presets_fill_unset_fields() -> None:
    """Test that each preset brings its own step size and stopping threshold."""
    edit_only = EditorConfig.preset("edit-only")
    composite = EditorConfig()
    assert composite.name == "composite"
    assert composite.lambdas == EDITOR_PRESETS["composite"]["lambdas"]
    assert edit_only.threshold == EDITOR_PRESETS["edit-only"]["threshold"]
    assert edit_only.threshold < composite.threshold
    assert edit_only.learning_rate > composite.learning_rate
    pinned = EditorConfig(name="edit-only", threshold=0.2)
    assert pinned.threshold == 0.2
    assert pinned.learning_rate == edit_only.learning_rate
    assert EditorConfig(name="custom").learning_rate == 1e-2


def test_adversarial_batch_avoids_the_grid(corpus: Corpus) -> None:
    """Test that training samples never reuse a grid source."""
    edit = corpus.records[3]
    sets = sample_sets(edit, corpus, seed=0)
    batch = build_adversarial_batch(edit, corpus, sets, seed=0)
    used = set(sets.provenance.values())
    assert batch.provenance["RI"] not in used
    assert batch.provenance["unrelated"] not in used
    assert batch.provenance["RI"] != batch.provenance["unrelated"]
    assert batch.provenance["CI"] != sets.provenance["T2"]
    assert records_disjoint(edit, corpus.get(batch.provenance["RI"]))
    assert batch.ri_sample.question == edit.question
    assert batch.ni_sample.image is None
    assert batch.ni_sample.question == edit.question
    assert batch.unrelated_text.image is None
    assert build_adversarial_batch(edit, corpus, sets, seed=0) == batch


def _setup(corpus: Corpus, index: int = 0):
    edit = corpus.records[index]
    sets = sample_sets(edit, corpus, seed=0)
    return edit, sets, build_adversarial_batch(edit, corpus, sets, seed=0)


def test_zero_steps_returns_an_unconverged_copy(
    corpus: Corpus, params: Parameters, model_config: ModelConfig
) -> None:
    """Test that a zero budget returns an equal but distinct snapshot."""
    edit, _, batch = _setup(corpus)
    config = EditorConfig.preset("composite", max_steps=0)
    post, report = apply_edit(params, edit, batch, config, corpus, model_config)
    assert post is not params
    assert post.bitwise_equal(params)
    assert report.steps == 0
    assert not report.converged
    assert report.loss_curve == [report.total_loss]
    with pytest.raises(DidNotConverge):
        apply_edit(params, edit, batch, config, corpus, model_config, strict=True)


def test_edit_leaves_base_untouched(
    corpus: Corpus, params: Parameters, model_config: ModelConfig
) -> None:
    """Test that editing touches only target tensors and never the input snapshot."""
    edit, _, batch = _setup(corpus, 1)
    config = EditorConfig.preset("composite", max_steps=4, learning_rate=0.5)
    post, report = apply_edit(params, edit, batch, config, corpus, model_config)
    assert params.bitwise_equal(init_parameters(model_config))
    assert report.steps <= 4
    assert report.editor == "composite"
    changed = {name for name, norm in report.delta_norms.items() if norm > 0}
    assert changed <= set(report.target_params)
    assert len(report.loss_curve) == report.steps + 1
    assert np.array_equal(post["tok_embed"], params["tok_embed"])


def test_editing_lowers_the_edit_loss(
    corpus: Corpus, params: Parameters, model_config: ModelConfig
) -> None:
    """Test that a few edit-only steps make the target more likely."""
    edit, _, batch = _setup(corpus, 2)
    config = EditorConfig.preset("edit-only", max_steps=20, learning_rate=0.5)
    _, report = apply_edit(params, edit, batch, config, corpus, model_config)
    assert report.edit_loss < report.loss_curve[0]


def test_image_only_edit_keeps_text_only_answers(
    corpus: Corpus, params: Parameters, model_config: ModelConfig
) -> None:
    """Test that editing only the image projection cannot move ABSENT-image cells."""
    edit, sets, batch = _setup(corpus, 4)
    config = EditorConfig.preset("composite", target_params="V", max_steps=5, learning_rate=1.0)
    post, report = apply_edit(params, edit, batch, config, corpus, model_config)
    assert report.target_params == ["image_proj.weight", "image_proj.bias"]
    suite = build_grid(sets)
    inputs = [
        corpus.model_input(*suite.cell_input(cell))
        for cell in suite.cells
        if cell.image_index == 4
    ]
    assert len(inputs) == 4
    assert np.array_equal(
        predict_batch(params, inputs, model_config), predict_batch(post, inputs, model_config)
    )


def test_non_finite_loss_is_a_numeric_error(
    corpus: Corpus, params: Parameters, model_config: ModelConfig, monkeypatch: pytest.MonkeyPatch
) -> None:
    """Test that a NaN objective stops the edit with a lab error, not a validation error."""
    edit, _, batch = _setup(corpus)
    nan = float("nan")
    monkeypatch.setattr(
        CompositeObjective, "terms", lambda self, cache: LossTerms(nan, 0.0, 0.0, nan)
    )
    config = EditorConfig.preset("composite", max_steps=3)
    with pytest.raises(NonFiniteLoss) as info:
        apply_edit(params, edit, batch, config, corpus, model_config)
    assert isinstance(info.value, TBLabError)
    assert info.value.exit_code == 4
    assert info.value.detail["edit_id"] == edit.id
    assert info.value.detail["step"] == 0
