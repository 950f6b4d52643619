"""
Metric engine.

Every cell of an edit's grid is answered greedily by the pre- and the
post-edit model. A cell is satisfied when the post-edit answer meets the
cell's expectation; each metric is the mean of that indicator over the
cells of its class and over all edits.
"""

from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from typing import Any

import numpy as np
from pydantic import BaseModel

from tblab.core.constants import CANONICAL_NINE
from tblab.core.standard_models.abstract.errors import TBLabError
from tblab.data.sampling import EvalSuite, Expectation, MetricClass
from tblab.data.world import Corpus
from tblab.model.config import ModelConfig
from tblab.model.params import Parameters
from tblab.model.transformer import predict_batch

METRIC_CLASSES: dict[str, MetricClass] = {
    "rel": MetricClass.REL,
    "t_gen": MetricClass.T_GEN,
    "i_gen": MetricClass.I_GEN,
    "t_loc": MetricClass.T_LOC,
    "i_loc": MetricClass.I_LOC,
    "ri_loc": MetricClass.RI_LOC,
    "ni_loc": MetricClass.NI_LOC,
    "ci_loc": MetricClass.CI_LOC,
}


def exact_match(predicted: str, reference: str) -> bool:
    """
    Single-token exact match.

    Examples
    --------
    >>> exact_match("black", "black"), exact_match("black", "green")
    (True, False)
    """
    return predicted == reference


def is_satisfied(expectation: Expectation, post: str, pre: str, target: str) -> bool:
    """Whether a post-edit answer meets ``expectation``."""
    if expectation is Expectation.EQUALS_TARGET:
        return exact_match(post, target)
    if expectation is Expectation.NOT_TARGET:
        return not exact_match(post, target)
    return exact_match(post, pre)


class CellResult(BaseModel):
    """Pre/post answers of one cell of one edit."""

    edit_id: int
    cell: str
    metric_class: MetricClass
    family: str | None
    expectation: Expectation
    pre_answer: str
    post_answer: str
    target: str
    pre_edit_answer: str
    satisfied: bool

    @property
    def consistent(self) -> bool:
        return self.post_answer == self.pre_answer


def evaluate_suite(
    pre: Parameters,
    post: Parameters,
    suite: EvalSuite,
    corpus: Corpus,
    model_config: ModelConfig,
) -> list[CellResult]:
    """
    Answer every cell of ``suite`` with both models (argmax decoding).

    Errors raised while answering a cell carry a note naming the cell.
    """
    edit = suite.edit
    vocab = corpus.vocab
    results = []
    for cell in suite.cells:
        question, image = suite.cell_input(cell)
        try:
            model_input = corpus.model_input(question, image)
            pre_id = int(predict_batch(pre, [model_input], model_config)[0].argmax())
            post_id = int(predict_batch(post, [model_input], model_config)[0].argmax())
        except TBLabError as e:
            e.add_note(f"while evaluating cell {cell.label} of edit {edit.id}")
            raise
        pre_answer, post_answer = vocab.decode(pre_id), vocab.decode(post_id)
        results.append(
            CellResult(
                edit_id=edit.id,
                cell=cell.label,
                metric_class=cell.metric_class,
                family=cell.family,
                expectation=cell.expectation,
                pre_answer=pre_answer,
                post_answer=post_answer,
                target=edit.target,
                pre_edit_answer=edit.answer,
                satisfied=is_satisfied(cell.expectation, post_answer, pre_answer, edit.target),
            )
        )
    return results


class MetricReport(BaseModel):
    """
    The eight metrics, per-cell scores and the canonical-nine mean.

    Metrics are None when no edit was evaluated.
    """

    n_edits: int
    rel: float | None = None
    t_gen: float | None = None
    i_gen: float | None = None
    t_loc: float | None = None
    i_loc: float | None = None
    ri_loc: float | None = None
    ni_loc: float | None = None
    ci_loc: float | None = None
    per_pair: dict[str, float] = {}
    mean_nine: float | None = None
    supplementary: dict[str, float] = {}
    consistency: dict[str, float] = {}
    note: str | None = None
    metadata: dict[str, Any] = {}

    @property
    def locality_mean(self) -> float | None:
        """Mean of RI-, NI- and CI-Loc."""
        values = [self.ri_loc, self.ni_loc, self.ci_loc]
        if any(v is None for v in values):
            return None
        return float(np.mean(values))


def _mean(flags: Iterable[bool]) -> float:
    flags = list(flags)
    return sum(flags) / len(flags)


def aggregate(
    results: Sequence[CellResult], metadata: Mapping[str, Any] | None = None
) -> MetricReport:
    """
    Average cell indicators over edits into a :class:`MetricReport`.

    ``results`` may hold the cells of many edits in any order; every value
    is a ratio of counts, so the report does not depend on that order.
    """
    metadata = dict(metadata or {})
    if not results:
        return MetricReport(n_edits=0, note="no edits", metadata=metadata)

    by_class: dict[MetricClass, list[bool]] = defaultdict(list)
    by_cell: dict[str, list[bool]] = defaultdict(list)
    consistent: dict[str, list[bool]] = defaultdict(list)
    supplementary: dict[str, list[bool]] = defaultdict(list)
    for result in results:
        by_class[result.metric_class].append(result.satisfied)
        by_cell[result.cell].append(result.satisfied)
        consistent[result.cell].append(result.consistent)
        if result.metric_class is MetricClass.SUPPLEMENTARY and result.family:
            supplementary[result.family].append(result.satisfied)

    metrics = {
        name: _mean(by_class[cls]) if by_class[cls] else None
        for name, cls in METRIC_CLASSES.items()
    }
    per_pair = {cell: _mean(flags) for cell, flags in sorted(by_cell.items())}
    nine = [per_pair[label] for label in CANONICAL_NINE if label in per_pair]
    return MetricReport(
        n_edits=len({r.edit_id for r in results}),
        **metrics,
        per_pair=per_pair,
        mean_nine=sum(nine) / len(nine) if len(nine) == len(CANONICAL_NINE) else None,
        supplementary={f: _mean(v) for f, v in sorted(supplementary.items())},
        consistency={cell: _mean(v) for cell, v in sorted(consistent.items())},
        metadata=metadata,
    )
