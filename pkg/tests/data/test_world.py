"""Test the synthetic world, the corpus generator and corpus files."""

from pathlib import Path

import numpy as np
import pytest

from tblab.core.standard_models.abstract.errors import DataError, WorldExhausted
from tblab.data.io import load_corpus, save_corpus
from tblab.data.world import (
    Corpus,
    Vocabulary,
    WorldConfig,
    generate_corpus,
    question_slot,
    records_disjoint,
)


def test_vocabulary_layout(world: WorldConfig) -> None:
    """Test that pad is id 0 and every answer value is in the vocabulary."""
    vocab = Vocabulary.from_world(world)
    assert vocab.id("<pad>") == 0
    assert vocab.id("<none>") == 1
    assert len(vocab.answer_ids(world)) == 1 + world.n_attributes * world.n_values
    assert vocab.decode(vocab.id("ball")) == "ball"
    assert "?" in vocab


def test_corpus_is_deterministic(world: WorldConfig, corpus: Corpus) -> None:
    """Test that regenerating with the same world reproduces every record."""
    again = generate_corpus(world)
    assert again.records == corpus.records
    assert len(corpus) == world.n_records


def test_records_are_consistent(corpus: Corpus) -> None:
    """Test answers, targets, rephrases and embeddings of every record."""
    facts = set()
    for record in corpus.records:
        obj, attribute = record.slot
        assert record.image.attrs[obj][attribute] == record.answer
        assert record.target != record.answer
        assert question_slot(record.rephrase_q) == record.slot
        assert record.rephrase_q != record.question
        assert record.rephrase_img.attrs == record.image.attrs
        assert record.rephrase_img.features != record.image.features
        assert np.linalg.norm(record.embedding_array) == pytest.approx(1.0)
        facts.add((record.image.id, tuple(record.question)))
    assert len(facts) == len(corpus)


def test_questions_end_on_the_answer_slot(corpus: Corpus) -> None:
    """Test that every question form puts "?" at the output position."""
    for record in corpus.records[:10]:
        assert record.question[-1] == "?"
        assert record.rephrase_q[-1] == "?"


def test_typical_values_dominate_answers(world: WorldConfig, corpus: Corpus) -> None:
    """Test that answers lean to the typical value and targets avoid it."""
    typical = sum(r.answer == world.typical_value(r.slot[1]) for r in corpus.records)
    assert typical / len(corpus) > 1 / world.n_values + 0.1
    for record in corpus.records:
        assert record.target != world.typical_value(record.slot[1])


def test_prior_share_bounds() -> None:
    """Test that a prior below the uniform share is refused."""
    assert WorldConfig(n_values=4, prior_share=0.25).value_probs.tolist() == [0.25] * 4
    probs = WorldConfig(n_values=4, prior_share=0.7).value_probs
    assert probs.sum() == pytest.approx(1.0)
    assert probs[0] == pytest.approx(0.7)
    with pytest.raises(ValueError, match="prior_share"):
        WorldConfig(n_values=4, prior_share=0.2)


def test_two_value_world_targets_the_other_value() -> None:
    """Test that with two values the typical value can still be the target."""
    world = WorldConfig(
        n_objects=2, objects_per_image=1, n_attributes=1, n_values=2, n_records=4
    )
    for record in generate_corpus(world).records:
        assert {record.answer, record.target} == set(world.values("color"))


def test_records_disjoint_is_symmetric(corpus: Corpus) -> None:
    """Test that disjointness never holds for a record with itself."""
    first, second = corpus.records[0], corpus.records[1]
    assert not records_disjoint(first, first)
    assert records_disjoint(first, second) == records_disjoint(second, first)


def test_small_world_is_exhausted() -> None:
    """Test that asking for more facts than the world holds is refused."""
    world = WorldConfig(
        n_objects=1, objects_per_image=1, n_attributes=1, n_values=2, n_records=3
    )
    assert world.capacity == 2
    with pytest.raises(WorldExhausted):
        generate_corpus(world)


def test_exhaustive_world_uses_every_fact() -> None:
    """Test that a world at capacity yields each distinct fact once."""
    world = WorldConfig(
        n_objects=2, objects_per_image=1, n_attributes=1, n_values=2, n_records=4
    )
    corpus = generate_corpus(world)
    assert len({(r.image.id, tuple(r.question)) for r in corpus.records}) == 4


def test_corpus_file_round_trip(tmp_path: Path, corpus: Corpus) -> None:
    """Test that saving twice is byte-identical and loading restores the corpus."""
    first = save_corpus(corpus, tmp_path / "a.jsonl")
    second = save_corpus(generate_corpus(corpus.world), tmp_path / "b.jsonl")
    assert first.read_bytes() == second.read_bytes()
    loaded = load_corpus(first)
    assert loaded.world == corpus.world
    assert loaded.records == corpus.records


def test_corpus_file_errors(tmp_path: Path) -> None:
    """Test that missing files and foreign formats are data errors."""
    with pytest.raises(DataError):
        load_corpus(tmp_path / "missing.jsonl")
    foreign = tmp_path / "foreign.jsonl"
    foreign.write_text('{"format": "other"}\n')
    with pytest.raises(DataError):
        load_corpus(foreign)
