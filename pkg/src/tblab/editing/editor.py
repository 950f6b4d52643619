"""The per-edit optimisation loop."""

import math

from pydantic import BaseModel, field_validator

from tblab.core.env import Env
from tblab.core.logger import setup_logger
from tblab.core.standard_models.abstract.errors import DidNotConverge, NonFiniteLoss
from tblab.data.world import Corpus, EditRecord
from tblab.editing.batch import AdversarialBatch
from tblab.editing.config import EditorConfig
from tblab.editing.losses import CompositeObjective, LossTerms
from tblab.model.config import ModelConfig
from tblab.model.params import Parameters

logger = setup_logger("tblab.editing.editor", level=Env().LOGGER_LEVEL)


class EditReport(BaseModel):
    """Outcome of one edit."""

    editor: str
    edit_id: int
    steps: int
    edit_loss: float
    locality_loss: float
    multimodal_locality_loss: float
    total_loss: float
    per_type: dict[str, float]
    delta_norms: dict[str, float]
    target_params: list[str]
    converged: bool
    loss_curve: list[float]

    @field_validator("edit_loss", "locality_loss", "multimodal_locality_loss", "total_loss")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            msg = "loss values must be finite"
            raise ValueError(msg)
        return value


def apply_edit(
    params: Parameters,
    edit: EditRecord,
    batch: AdversarialBatch,
    config: EditorConfig,
    corpus: Corpus,
    model_config: ModelConfig,
    *,
    strict: bool = False,
) -> tuple[Parameters, EditReport]:
    """
    Gradient descent on the composite objective over the target tensors.

    Steps until the edit loss drops below ``config.threshold`` or
    ``config.max_steps`` steps were taken. ``params`` is never modified; the
    returned snapshot is new. Without convergence the snapshot with the
    lowest edit loss seen is returned.

    Parameters
    ----------
    params : Parameters
        Pre-edit snapshot.
    edit : EditRecord
        The fact to rewrite; the target answer is ``edit.target``.
    batch : AdversarialBatch
        Locality samples.
    config : EditorConfig
        Editor settings.
    corpus : Corpus
        Supplies the vocabulary.
    model_config : ModelConfig
        Model configuration.
    strict : bool, optional
        Raise :class:`DidNotConverge` instead of returning an unconverged
        result, by default False.

    Returns
    -------
    tuple[Parameters, EditReport]
        The edited snapshot and the report.

    Raises
    ------
    NonFiniteLoss
        If any objective term is NaN or infinite.
    DidNotConverge
        If ``strict`` and the threshold was not reached.
    """
    names = params.resolve_group(config.target_params, model_config.n_layers)
    objective = CompositeObjective(params, edit, batch, config, corpus, model_config)

    current = params
    best: tuple[Parameters, LossTerms] | None = None
    curve: list[float] = []
    converged = False
    steps = 0
    while True:
        cache = objective.forward(current)
        terms = objective.terms(cache)
        if not all(
            math.isfinite(x)
            for x in (terms.edit_loss, terms.locality_loss, terms.multimodal_locality_loss, terms.total)
        ):
            msg = f"edit {edit.id}: non-finite loss at step {steps}"
            raise NonFiniteLoss(msg, edit_id=edit.id, step=steps, loss_curve=curve)
        curve.append(terms.total)
        if best is None or terms.edit_loss < best[1].edit_loss:
            best = (current, terms)
        if config.max_steps > 0 and terms.edit_loss < config.threshold:
            converged = True
            break
        if steps >= config.max_steps:
            break
        grads = objective.gradient(current, cache, names)
        current = current.replace(
            {name: current[name] - config.learning_rate * grads[name] for name in names}
        )
        steps += 1

    result, final = (current, terms) if converged else best
    if result is params:
        result = params.clone()
    report = EditReport(
        editor=config.name,
        edit_id=edit.id,
        steps=steps,
        edit_loss=final.edit_loss,
        locality_loss=final.locality_loss,
        multimodal_locality_loss=final.multimodal_locality_loss,
        total_loss=final.total,
        per_type=final.per_type,
        delta_norms=params.delta_norms(result),
        target_params=names,
        converged=converged,
        loss_curve=curve,
    )
    logger.debug(
        f"edit {edit.id}: {steps} steps, edit loss {final.edit_loss:.4f}, converged={converged}"
    )
    if strict and not converged:
        msg = f"edit {edit.id} did not converge in {config.max_steps} steps"
        raise DidNotConverge(msg, params=result, report=report)
    return result, report
