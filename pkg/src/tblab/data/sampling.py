"""Similarity retrieval, text/image set sampling and the locality grid.

A grid crosses the texts ``T1..T4`` with the images ``I1..I4`` (``I4`` is
the absent image). Every cell except ``T1I1`` is a locality cell and carries
the behaviour expected of a well-behaved edit on it.
"""

from collections.abc import Iterable
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from tblab.core.constants import CANONICAL_NINE
from tblab.core.env import Env
from tblab.core.helpers import derive_rng
from tblab.core.logger import setup_logger
from tblab.core.standard_models.abstract.errors import CorpusTooSmall, NoCandidate
from tblab.data.world import Corpus, EditRecord, ImageSpec, records_disjoint

logger = setup_logger("tblab.data.sampling", level=Env().LOGGER_LEVEL)


class MetricClass(str, Enum):
    REL = "Rel"
    T_GEN = "TGen"
    I_GEN = "IGen"
    T_LOC = "TLoc"
    I_LOC = "ILoc"
    RI_LOC = "RILoc"
    NI_LOC = "NILoc"
    CI_LOC = "CILoc"
    SUPPLEMENTARY = "Supplementary"


class Expectation(str, Enum):
    EQUALS_TARGET = "EqualsTarget"
    NOT_TARGET = "NotTarget"
    EQUALS_PRE_EDIT = "EqualsPreEdit"


EXPECTATIONS = {
    MetricClass.REL: Expectation.EQUALS_TARGET,
    MetricClass.T_GEN: Expectation.EQUALS_TARGET,
    MetricClass.I_GEN: Expectation.EQUALS_TARGET,
    MetricClass.T_LOC: Expectation.EQUALS_PRE_EDIT,
    MetricClass.I_LOC: Expectation.EQUALS_PRE_EDIT,
    MetricClass.SUPPLEMENTARY: Expectation.EQUALS_PRE_EDIT,
    MetricClass.RI_LOC: Expectation.NOT_TARGET,
    MetricClass.NI_LOC: Expectation.NOT_TARGET,
    MetricClass.CI_LOC: Expectation.NOT_TARGET,
}

# (text index, image index) -> (class, family). Family names the locality
# type a supplementary cell belongs to.
_CELL_TABLE: dict[tuple[int, int], tuple[MetricClass, str | None]] = {
    (1, 1): (MetricClass.REL, None),
    (1, 2): (MetricClass.CI_LOC, "CI"),
    (2, 1): (MetricClass.CI_LOC, "CI"),
    (2, 2): (MetricClass.CI_LOC, "CI"),
    (1, 3): (MetricClass.RI_LOC, "RI"),
    (3, 1): (MetricClass.RI_LOC, "RI"),
    (1, 4): (MetricClass.NI_LOC, "NI"),
    (2, 4): (MetricClass.NI_LOC, "NI"),
    (4, 4): (MetricClass.T_LOC, "T"),
    (3, 3): (MetricClass.I_LOC, "I"),
    (3, 4): (MetricClass.SUPPLEMENTARY, "NI"),
    (2, 3): (MetricClass.SUPPLEMENTARY, "RI"),
    (4, 1): (MetricClass.SUPPLEMENTARY, "RI"),
    (4, 2): (MetricClass.SUPPLEMENTARY, "RI"),
    (4, 3): (MetricClass.SUPPLEMENTARY, "RI"),
    (3, 2): (MetricClass.SUPPLEMENTARY, "RI"),
}


def classify_cell(text_index: int, image_index: int) -> tuple[MetricClass, str | None]:
    """
    Metric class and locality family of grid cell ``T{i}I{j}``.

    Examples
    --------
    >>> classify_cell(2, 4)
    (<MetricClass.NI_LOC: 'NILoc'>, 'NI')
    """
    return _CELL_TABLE.get((text_index, image_index), (MetricClass.SUPPLEMENTARY, None))


class Retrieved(BaseModel):
    """The record retrieval selected, with its question, image and answer."""

    model_config = ConfigDict(frozen=True)

    record_id: int
    question: list[str]
    image: ImageSpec
    answer: str
    similarity: float


def _cosine(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(vector)
    dots = matrix @ vector
    return np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)


def retrieve_similar(
    edit: EditRecord, corpus: Corpus, exclude: Iterable[int] = ()
) -> Retrieved:
    """
    Highest-cosine record whose answer differs from the edit target.

    Candidates are scanned in descending cosine similarity of their
    embeddings to the edit's, ties broken by ascending record id. The edit
    itself, records whose question is token-identical to the edit question
    and ids in ``exclude`` are never returned.

    Raises
    ------
    NoCandidate
        If no record qualifies.
    """
    skip = set(exclude) | {edit.id}
    candidates = [
        r for r in corpus.records if r.id not in skip and r.question != edit.question
    ]
    if not candidates:
        msg = f"no retrieval candidate for edit {edit.id}"
        raise NoCandidate(msg)
    sims = _cosine(np.stack([r.embedding_array for r in candidates]), edit.embedding_array)
    ids = np.array([r.id for r in candidates])
    # lexsort: last key is primary
    for index in np.lexsort((ids, -sims)):
        record = candidates[int(index)]
        if record.answer != edit.target:
            return Retrieved(
                record_id=record.id,
                question=record.question,
                image=record.image,
                answer=record.answer,
                similarity=float(sims[index]),
            )
    msg = f"every retrieval candidate for edit {edit.id} answers the edit target"
    raise NoCandidate(msg)


class SampledSets(BaseModel):
    """
    Texts ``T1..Tk`` and images ``I1..Ik`` of one edit (``None`` is ABSENT).

    ``answers`` holds the ground-truth answer of each corpus pairing
    (``T1I1``, ``T2I2``, ``T3I3``, ``T4I4``). A text-only question is
    answered with the typical value of its attribute. ``provenance`` names
    the record each text/image came from.
    """

    model_config = ConfigDict(frozen=True)

    edit: EditRecord
    texts: list[list[str]] = Field(min_length=1)
    images: list[ImageSpec | None] = Field(min_length=1)
    answers: dict[str, str]
    provenance: dict[str, int]

    @model_validator(mode="after")
    def _check(self) -> "SampledSets":
        if self.texts[0] != self.edit.question:
            msg = "T1 must be the edit question"
            raise ValueError(msg)
        if self.answers.get("T2I2") == self.edit.target:
            msg = "the T2I2 answer must differ from the edit target"
            raise ValueError(msg)
        if len(self.images) == 4 and self.images[3] is not None:
            msg = "I4 must be ABSENT"
            raise ValueError(msg)
        return self


def sample_sets(edit: EditRecord, corpus: Corpus, seed: int) -> SampledSets:
    """
    Draw the evaluation texts and images of ``edit``.

    ``T2/I2`` come from :func:`retrieve_similar`. ``T3/I3`` is a seeded
    uniform draw among records with zero attribute overlap with the edit;
    ``T4`` a seeded draw among the remaining disjoint records. ``I4`` is
    ABSENT.

    Raises
    ------
    NoCandidate
        If retrieval finds no ``T2``.
    CorpusTooSmall
        If fewer than two disjoint records remain for ``T3`` and ``T4``.
    """
    rng = derive_rng(seed, edit.id, "sets")
    t2 = retrieve_similar(edit, corpus)
    disjoint = [
        r
        for r in corpus.records
        if r.id not in {edit.id, t2.record_id} and records_disjoint(edit, r)
    ]
    if len(disjoint) < 2:
        msg = f"edit {edit.id}: {len(disjoint)} disjoint records, T3 and T4 need 2"
        raise CorpusTooSmall(msg)
    t3 = disjoint[int(rng.integers(len(disjoint)))]
    rest = [r for r in disjoint if r.id != t3.id]
    t4 = rest[int(rng.integers(len(rest)))]
    return SampledSets(
        edit=edit,
        texts=[edit.question, t2.question, t3.question, t4.question],
        images=[edit.image, t2.image, t3.image, None],
        answers={
            "T1I1": edit.answer,
            "T2I2": t2.answer,
            "T3I3": t3.answer,
            "T4I4": corpus.world.typical_value(t4.slot[1]),
        },
        provenance={"T1": edit.id, "T2": t2.record_id, "T3": t3.id, "T4": t4.id},
    )


class EvalCell(BaseModel):
    """One grid cell. Indices 0 mark the generalization cells."""

    model_config = ConfigDict(frozen=True)

    text_index: int
    image_index: int
    metric_class: MetricClass
    expectation: Expectation
    family: str | None = None

    @property
    def label(self) -> str:
        if self.metric_class is MetricClass.T_GEN:
            return "T-Gen"
        if self.metric_class is MetricClass.I_GEN:
            return "I-Gen"
        return f"T{self.text_index}I{self.image_index}"

    @property
    def is_locality(self) -> bool:
        return self.metric_class not in {
            MetricClass.REL,
            MetricClass.T_GEN,
            MetricClass.I_GEN,
        }


class EvalSuite(BaseModel):
    """The grid of one edit, plus the two generalization cells."""

    model_config = ConfigDict(frozen=True)

    sets: SampledSets
    cells: list[EvalCell]

    @property
    def edit(self) -> EditRecord:
        return self.sets.edit

    @property
    def locality_cells(self) -> list[EvalCell]:
        return [c for c in self.cells if c.is_locality]

    @property
    def canonical_nine(self) -> list[EvalCell]:
        by_label = {c.label: c for c in self.cells}
        return [by_label[label] for label in CANONICAL_NINE if label in by_label]

    def cell(self, label: str) -> EvalCell:
        for c in self.cells:
            if c.label == label:
                return c
        raise KeyError(label)

    def cell_input(self, cell: EvalCell) -> tuple[list[str], ImageSpec | None]:
        """The (question, image) query of ``cell``."""
        if cell.metric_class is MetricClass.T_GEN:
            return self.edit.rephrase_q, self.edit.image
        if cell.metric_class is MetricClass.I_GEN:
            return self.edit.question, self.edit.rephrase_img
        return (
            self.sets.texts[cell.text_index - 1],
            self.sets.images[cell.image_index - 1],
        )


def _make_cell(i: int, j: int) -> EvalCell:
    metric_class, family = classify_cell(i, j)
    return EvalCell(
        text_index=i,
        image_index=j,
        metric_class=metric_class,
        expectation=EXPECTATIONS[metric_class],
        family=family,
    )


def build_grid(sets: SampledSets) -> EvalSuite:
    """
    Cross every text with every image and append the generalization cells.

    The result holds ``len(T) * len(I)`` grid cells, one of them ``Rel``,
    followed by the ``T-Gen`` (rephrased question with ``I1``) and ``I-Gen``
    (``T1`` with the rephrased image) cells.
    """
    cells = [
        _make_cell(i, j)
        for i in range(1, len(sets.texts) + 1)
        for j in range(1, len(sets.images) + 1)
    ]
    cells.append(
        EvalCell(
            text_index=0,
            image_index=1,
            metric_class=MetricClass.T_GEN,
            expectation=Expectation.EQUALS_TARGET,
        )
    )
    cells.append(
        EvalCell(
            text_index=1,
            image_index=0,
            metric_class=MetricClass.I_GEN,
            expectation=Expectation.EQUALS_TARGET,
        )
    )
    return EvalSuite(sets=sets, cells=cells)


def select_edits(corpus: Corpus, count: int, seed: int) -> list[EditRecord]:
    """Seeded draw of ``count`` distinct edit records, ordered by id."""
    if count > len(corpus):
        msg = f"{count} edits requested from a corpus of {len(corpus)} records"
        raise CorpusTooSmall(msg)
    rng = derive_rng(seed, "edits")
    chosen = rng.choice(len(corpus), size=count, replace=False)
    return sorted((corpus.records[int(i)] for i in chosen), key=lambda r: r.id)

