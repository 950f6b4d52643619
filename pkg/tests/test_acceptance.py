"""Desk-scale experiments: base training, editing at scale and attribution.

These train the default base model and run 50 edits per editor, so they
are deselected by default; run them with ``poe test-slow``.
"""

import numpy as np
import pytest

from tblab.attribution.key_tokens import extract_key_tokens
from tblab.attribution.masking import default_layer_ranges, mask_sweep
from tblab.attribution.modality import sign_test
from tblab.cli.commands.pipeline import EditOutcome, process_edit, summarize_diagnostics
from tblab.core.config import RunConfig, load_config
from tblab.data.sampling import select_edits
from tblab.data.world import Corpus, generate_corpus
from tblab.editing.config import EditorConfig
from tblab.evaluation.metrics import MetricReport, aggregate
from tblab.model.params import Parameters
from tblab.model.training import corpus_accuracy, train_base
from tblab.model.transformer import forward_with_trace

pytestmark = pytest.mark.slow

N_EDITS = 50


@pytest.fixture(scope="module")
def config() -> RunConfig:
    return load_config(overrides={"selection": {"n_edits": N_EDITS, "diagnostics": True}})


@pytest.fixture(scope="module")
def desk_corpus(config: RunConfig) -> Corpus:
    return generate_corpus(config.world)


@pytest.fixture(scope="module")
def base(desk_corpus: Corpus, config: RunConfig) -> Parameters:
    return train_base(desk_corpus, config.model, config.train)


def _run_editor(
    name: str, base: Parameters, corpus: Corpus, config: RunConfig, **overrides: object
) -> list[EditOutcome]:
    editor = EditorConfig.preset(name, **overrides)
    run_config = config.model_copy(update={"editor": editor})
    edits = select_edits(corpus, config.selection.n_edits, config.selection.seed)
    return [process_edit(edit, base, corpus, config.model, run_config) for edit in edits]


def _report(outcomes: list[EditOutcome]) -> MetricReport:
    return aggregate([r for outcome in outcomes for r in outcome.results])


@pytest.fixture(scope="module")
def edit_only(base: Parameters, desk_corpus: Corpus, config: RunConfig) -> list[EditOutcome]:
    return _run_editor("edit-only", base, desk_corpus, config)


@pytest.fixture(scope="module")
def composite(base: Parameters, desk_corpus: Corpus, config: RunConfig) -> list[EditOutcome]:
    return _run_editor("composite", base, desk_corpus, config)


def test_base_model_quality(base: Parameters, desk_corpus: Corpus, config: RunConfig) -> None:
    """Test that the default desk model memorizes its corpus deterministically."""
    assert corpus_accuracy(base, desk_corpus, config.model) >= 0.95
    assert train_base(desk_corpus, config.model, config.train).bitwise_equal(base)


def test_edit_only_editing_goes_blind(edit_only: list[EditOutcome]) -> None:
    """Test that the edit-loss-only editor is reliable but loses multimodal locality."""
    report = _report(edit_only)
    assert report.n_edits == N_EDITS
    assert report.rel >= 0.9
    assert report.locality_mean < 0.5


def test_composite_loss_restores_locality(
    edit_only: list[EditOutcome], composite: list[EditOutcome]
) -> None:
    """Test that the composite objective improves locality at equal reliability."""
    blind, mitigated = _report(edit_only), _report(composite)
    assert mitigated.rel >= 0.9
    assert mitigated.t_loc >= 0.9
    assert mitigated.locality_mean - blind.locality_mean >= 0.10


def test_image_only_editing_keeps_text_cells(
    base: Parameters, desk_corpus: Corpus, config: RunConfig
) -> None:
    """Test that editing the image projection leaves NI-Loc and T-Loc perfect."""
    small = config.model_copy(
        update={"selection": config.selection.model_copy(update={"n_edits": 10})}
    )
    report = _report(_run_editor("composite", base, desk_corpus, small, target_params="V"))
    assert report.ni_loc == 1.0
    assert report.t_loc == 1.0


def test_key_tokens_carry_the_answer(
    base: Parameters, desk_corpus: Corpus, config: RunConfig
) -> None:
    """Test that keeping only key tokens in the top layer retains most accuracy."""
    records = select_edits(desk_corpus, 200, config.selection.seed)
    inputs = [desk_corpus.model_input(r.question, r.image) for r in records]
    labels = [desk_corpus.vocab.id(r.answer) for r in records]
    paths = [
        extract_key_tokens(
            forward_with_trace(base, x.image_features, x.text_ids, config.model)[1],
            config.attribution,
        )
        for x in inputs
    ]
    ranges = default_layer_ranges(config.model.n_layers, config.attribution.sweep_stride)
    rows = mask_sweep(base, inputs, labels, paths, ranges, config.model, config.attribution)
    assert rows[0].fraction >= 0.80
    fractions = [row.fraction for row in rows]
    assert all(later <= earlier + 0.05 for earlier, later in zip(fractions, fractions[1:]))


def test_modality_shift(
    edit_only: list[EditOutcome], composite: list[EditOutcome], config: RunConfig
) -> None:
    """Test the top-layer ratio drop and the KL ratio under both editors."""
    top = config.model.n_layers
    blind = summarize_diagnostics([o.diagnostics for o in edit_only], top)
    mitigated = summarize_diagnostics([o.diagnostics for o in composite], top)
    assert blind.top_layer_drop.p_value <= 0.05
    assert mitigated.top_layer_drop.p_value > 0.05
    pairs = sign_test(
        [o.diagnostics.kl_ratio for o in composite],
        [o.diagnostics.kl_ratio for o in edit_only],
    )
    assert pairs.n_positive >= 0.7 * N_EDITS
    assert np.isfinite(blind.mean_kl_ratio)
