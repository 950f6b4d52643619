"""
Editing objectives.

The edit loss pulls the edited model toward the target answer; the locality
terms are KL divergences between the pre-edit answer distribution ``p`` and
the post-edit one ``q`` on samples the edit should leave alone. All terms are
read at the output position.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from tblab.core.constants import PROB_EPS
from tblab.core.standard_models.abstract.errors import IncompleteBatch
from tblab.data.world import Corpus, EditRecord
from tblab.editing.batch import AdversarialBatch, Query
from tblab.editing.config import EditorConfig, LossType
from tblab.model.config import ModelConfig
from tblab.model.params import Gradients, Parameters
from tblab.model.transformer import (
    BatchCache,
    backward_batch,
    encode_inputs,
    forward_batch,
    predict_batch,
)


def kl_divergence(p: np.ndarray, q: np.ndarray, eps: float = PROB_EPS) -> float:
    """
    ``KL(p || q) = sum p log(p / q)`` with both probabilities floored at ``eps``.

    Terms with ``p = 0`` contribute nothing.

    Examples
    --------
    >>> import numpy as np
    >>> kl_divergence(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
    0.0
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    terms = p * (np.log(np.maximum(p, eps)) - np.log(np.maximum(q, eps)))
    return max(float(np.sum(np.where(p > 0, terms, 0.0))), 0.0)


def _inputs(queries: Sequence[Query], corpus: Corpus) -> list:
    return [corpus.model_input(q.question, q.image) for q in queries]


def answer_distributions(
    params: Parameters,
    queries: Sequence[Query],
    corpus: Corpus,
    model_config: ModelConfig,
) -> np.ndarray:
    """Answer distributions of ``queries``, shape ``(len(queries), V)``."""
    return predict_batch(params, _inputs(queries, corpus), model_config)


def edit_loss(
    params_post: Parameters,
    edit: EditRecord,
    corpus: Corpus,
    model_config: ModelConfig,
    eps: float = PROB_EPS,
) -> float:
    """``-log p'(a | I1, T1)`` with ``p'`` floored at ``eps``."""
    probs = answer_distributions(
        params_post, [Query(question=edit.question, image=edit.image)], corpus, model_config
    )[0]
    return float(-np.log(max(probs[corpus.vocab.id(edit.target)], eps)))


def base_locality_loss(
    params: Parameters,
    params_post: Parameters,
    unrelated_multimodal: Query,
    unrelated_text: Query,
    corpus: Corpus,
    model_config: ModelConfig,
    eps: float = PROB_EPS,
) -> float:
    """KL on an unrelated (image, question) query plus KL on its text-only form."""
    queries = [unrelated_multimodal, unrelated_text]
    before = answer_distributions(params, queries, corpus, model_config)
    after = answer_distributions(params_post, queries, corpus, model_config)
    return sum(kl_divergence(p, q, eps) for p, q in zip(before, after, strict=True))


def _selected_samples(
    batch: AdversarialBatch, loss_combination: Sequence[LossType]
) -> list[tuple[LossType, Query]]:
    selected = []
    for loss_type in loss_combination:
        sample = batch.sample(loss_type)
        if sample is None:
            msg = f"adversarial batch has no {loss_type.value} sample"
            raise IncompleteBatch(msg)
        selected.append((loss_type, sample))
    return selected


def multimodal_locality_loss(
    params: Parameters,
    params_post: Parameters,
    batch: AdversarialBatch,
    loss_combination: Sequence[LossType],
    corpus: Corpus,
    model_config: ModelConfig,
    eps: float = PROB_EPS,
) -> float:
    """
    Sum of ``KL(p || q)`` over the selected RI, CI and NI samples; zero when
    none are selected.

    Raises
    ------
    IncompleteBatch
        If a selected type has no sample.
    """
    selected = _selected_samples(batch, loss_combination)
    if not selected:
        return 0.0
    queries = [sample for _, sample in selected]
    before = answer_distributions(params, queries, corpus, model_config)
    after = answer_distributions(params_post, queries, corpus, model_config)
    return sum(kl_divergence(p, q, eps) for p, q in zip(before, after, strict=True))


@dataclass(frozen=True)
class LossTerms:
    """Values of the three objective terms and their weighted total."""

    edit_loss: float
    locality_loss: float
    multimodal_locality_loss: float
    total: float
    per_type: dict[str, float] = field(default_factory=dict)


class CompositeObjective:
    """
    The weighted objective of one edit, evaluated on one stacked batch.

    Row 0 is the edited pair; rows 1-2 the unrelated query with and without
    its image; the remaining rows the selected adversarial samples. The
    pre-edit distributions are computed once at construction.
    """

    def __init__(
        self,
        params: Parameters,
        edit: EditRecord,
        batch: AdversarialBatch,
        config: EditorConfig,
        corpus: Corpus,
        model_config: ModelConfig,
    ):
        if batch.unrelated_multimodal is None or batch.unrelated_text is None:
            msg = "adversarial batch has no unrelated samples"
            raise IncompleteBatch(msg)
        self.config = config
        self.model_config = model_config
        self.selected = _selected_samples(batch, config.loss_combination)
        queries = [
            Query(question=edit.question, image=edit.image),
            batch.unrelated_multimodal,
            batch.unrelated_text,
            *(sample for _, sample in self.selected),
        ]
        self.ids, self.features, self.has_image = encode_inputs(
            _inputs(queries, corpus), model_config
        )
        self.target = corpus.vocab.id(edit.target)
        self.before = forward_batch(
            params, self.ids, self.features, self.has_image, model_config
        ).answer_probs

    def forward(self, params_post: Parameters) -> BatchCache:
        return forward_batch(
            params_post, self.ids, self.features, self.has_image, self.model_config
        )

    def terms(self, cache: BatchCache) -> LossTerms:
        eps = self.config.prob_eps
        after = cache.answer_probs
        le = float(-np.log(max(after[0, self.target], eps)))
        lloc = kl_divergence(self.before[1], after[1], eps) + kl_divergence(
            self.before[2], after[2], eps
        )
        per_type = {
            loss_type.value: kl_divergence(self.before[row], after[row], eps)
            for row, (loss_type, _) in enumerate(self.selected, start=3)
        }
        llocm = float(sum(per_type.values()))
        l1, l2, l3 = self.config.lambdas
        return LossTerms(
            edit_loss=le,
            locality_loss=lloc,
            multimodal_locality_loss=llocm,
            total=l1 * le + l2 * lloc + l3 * llocm,
            per_type=per_type,
        )

    def gradient(
        self, params_post: Parameters, cache: BatchCache, target_names: Sequence[str]
    ) -> Gradients:
        """Gradient of the total, restricted to ``target_names``."""
        l1, l2, l3 = self.config.lambdas
        after = cache.answer_probs
        dlogits = np.zeros_like(after)
        dlogits[0] = l1 * after[0]
        dlogits[0, self.target] -= l1
        # d KL(p || softmax(z)) / dz = softmax(z) - p
        dlogits[1:3] = l2 * (after[1:3] - self.before[1:3])
        dlogits[3:] = l3 * (after[3:] - self.before[3:])
        grads = backward_batch(params_post, cache, dlogits, self.model_config)
        return grads.restrict(target_names)


def composite_loss(
    params: Parameters,
    params_post: Parameters,
    edit: EditRecord,
    batch: AdversarialBatch,
    config: EditorConfig,
    corpus: Corpus,
    model_config: ModelConfig,
) -> float:
    """``l1 * L_e + l2 * L_loc + l3 * L_loc^M`` with the configured lambdas."""
    objective = CompositeObjective(params, edit, batch, config, corpus, model_config)
    return objective.terms(objective.forward(params_post)).total


def composite_loss_and_grad(
    params: Parameters,
    params_post: Parameters,
    edit: EditRecord,
    batch: AdversarialBatch,
    config: EditorConfig,
    corpus: Corpus,
    model_config: ModelConfig,
) -> tuple[LossTerms, Gradients]:
    """Loss terms and the gradient restricted to ``config.target_params``."""
    names = params_post.resolve_group(config.target_params, model_config.n_layers)
    objective = CompositeObjective(params, edit, batch, config, corpus, model_config)
    cache = objective.forward(params_post)
    return objective.terms(cache), objective.gradient(params_post, cache, names)
