"""Base training of the subject model on a corpus (mini-batch Adam)."""

import numpy as np

from tblab.core.env import Env
from tblab.core.helpers import derive_rng
from tblab.core.logger import log_start_end, setup_logger
from tblab.core.standard_models.abstract.errors import DataError, DidNotConverge
from tblab.data.world import Corpus
from tblab.model.config import ModelConfig, TrainConfig
from tblab.model.params import Parameters, init_parameters
from tblab.model.transformer import (
    ModelInput,
    backward_batch,
    encode_inputs,
    forward_batch,
    predict_batch,
)

logger = setup_logger("tblab.model.training", level=Env().LOGGER_LEVEL)


def training_examples(
    corpus: Corpus, train_config: TrainConfig
) -> tuple[list[ModelInput], list[int]]:
    """
    Inputs and label ids the base model is fit on.

    Every record contributes its (question, image) pair; rephrased
    questions and rephrased images are added when enabled. The text-only
    query (question, ABSENT) keeps the record's answer, so across records
    it fits the language prior of each attribute (its typical value).
    """
    vocab = corpus.vocab
    inputs: list[ModelInput] = []
    labels: list[int] = []
    for record in corpus.records:
        answer = vocab.id(record.answer)
        pairs = [(record.question, record.image, answer)]
        if train_config.include_rephrases:
            pairs.append((record.rephrase_q, record.image, answer))
            pairs.append((record.question, record.rephrase_img, answer))
        if train_config.include_text_only:
            pairs.append((record.question, None, answer))
        for question, image, label in pairs:
            inputs.append(corpus.model_input(question, image))
            labels.append(label)
    return inputs, labels


def corpus_accuracy(params: Parameters, corpus: Corpus, config: ModelConfig) -> float:
    """Exact-match accuracy on every record's (question, image) pair."""
    vocab = corpus.vocab
    inputs = [corpus.model_input(r.question, r.image) for r in corpus.records]
    labels = np.array([vocab.id(r.answer) for r in corpus.records])
    predicted = predict_batch(params, inputs, config).argmax(axis=-1)
    return float(np.mean(predicted == labels))


@log_start_end(logger=logger)
def train_base(
    corpus: Corpus, config: ModelConfig, train_config: TrainConfig
) -> Parameters:
    """
    Fit the subject model to ``corpus``.

    Parameters
    ----------
    corpus : Corpus
        The records to memorize.
    config : ModelConfig
        Model shape; its vocabulary size and feature width must match the
        corpus world.
    train_config : TrainConfig
        Optimizer settings.

    Returns
    -------
    Parameters
        Float32-representable parameters with record accuracy at or above
        ``train_config.target_accuracy``.

    Raises
    ------
    DataError
        If the corpus is empty or does not fit the model config.
    DidNotConverge
        If the target accuracy is not reached within ``max_epochs``. The
        error detail holds ``accuracy``, ``loss_curve`` and ``params``.
    """
    if len(corpus) == 0:
        msg = "cannot train on an empty corpus"
        raise DataError(msg)
    if len(corpus.vocab) != config.vocab_size:
        msg = f"vocabulary has {len(corpus.vocab)} tokens, model expects {config.vocab_size}"
        raise DataError(msg)
    if corpus.world.feature_dim != config.image_feature_dim:
        msg = f"image features have {corpus.world.feature_dim} dims, model expects {config.image_feature_dim}"
        raise DataError(msg)

    inputs, labels = training_examples(corpus, train_config)
    ids, features, has_image = encode_inputs(inputs, config)
    label_ids = np.asarray(labels)
    n_examples = len(inputs)
    rng = derive_rng(config.seed, "train")

    params = init_parameters(config)
    first = {name: np.zeros_like(t) for name, t in params.items()}
    second = {name: np.zeros_like(t) for name, t in params.items()}
    b1, b2 = train_config.beta1, train_config.beta2
    step = 0
    loss_curve: list[float] = []
    accuracy = 0.0

    for epoch in range(1, train_config.max_epochs + 1):
        order = rng.permutation(n_examples)
        epoch_loss = 0.0
        for start in range(0, n_examples, train_config.batch_size):
            rows = order[start : start + train_config.batch_size]
            cache = forward_batch(params, ids[rows], features[rows], has_image[rows], config)
            probs = cache.answer_probs
            picked = probs[np.arange(len(rows)), label_ids[rows]]
            epoch_loss += float(-np.sum(np.log(np.maximum(picked, 1e-12))))
            dlogits = probs.copy()
            dlogits[np.arange(len(rows)), label_ids[rows]] -= 1.0
            dlogits /= len(rows)
            grads = backward_batch(params, cache, dlogits, config)

            step += 1
            lr_t = train_config.learning_rate * np.sqrt(1 - b2**step) / (1 - b1**step)
            updates = {}
            for name, grad in grads.items():
                first[name] = b1 * first[name] + (1 - b1) * grad
                second[name] = b2 * second[name] + (1 - b2) * grad * grad
                updates[name] = params[name] - lr_t * first[name] / (
                    np.sqrt(second[name]) + train_config.adam_eps
                )
            params = params.replace(updates)
        loss_curve.append(epoch_loss / n_examples)

        if epoch % train_config.eval_every == 0 or epoch == train_config.max_epochs:
            accuracy = corpus_accuracy(params, corpus, config)
            logger.info(f"epoch {epoch}: loss {loss_curve[-1]:.4f}, accuracy {accuracy:.4f}")
            if accuracy >= train_config.target_accuracy:
                break

    params = params.to_float32_precision()
    accuracy = corpus_accuracy(params, corpus, config)
    if accuracy < train_config.target_accuracy:
        msg = f"base training reached accuracy {accuracy:.4f} < {train_config.target_accuracy}"
        raise DidNotConverge(msg, accuracy=accuracy, loss_curve=loss_curve, params=params)
    return params
