"""Image-versus-text diagnostics: per-layer contribution ratio, KL shift ratio, sign test."""

import math
from collections.abc import Sequence
from enum import Enum
from typing import Literal

import numpy as np
from pydantic import BaseModel
from scipy.stats import binomtest

from tblab.attribution.key_tokens import KeyTokenPath
from tblab.core.constants import PROB_EPS
from tblab.core.standard_models.abstract.errors import DataError
from tblab.editing.losses import kl_divergence
from tblab.model.config import ModelConfig, TokenKind
from tblab.model.params import Parameters
from tblab.model.transformer import PAD_ID, ModelInput, encode_inputs, forward_batch

KL_FLOOR = 1e-12


class RatioFlag(str, Enum):
    OK = "ok"
    NO_TEXT = "no_text"
    EMPTY = "empty"


class LayerRatio(BaseModel):
    """Image/text contribution ratio of one layer.

    ``ratio`` is None when it is not a finite number: ``flag`` tells an
    image-only layer (``no_text``, read as +inf) from a layer without key
    tokens (``empty``).
    """

    layer: int
    image_score: float
    text_score: float
    ratio: float | None
    flag: RatioFlag

    @property
    def value(self) -> float:
        if self.flag is RatioFlag.NO_TEXT:
            return math.inf
        if self.flag is RatioFlag.EMPTY:
            return math.nan
        return self.ratio

    @property
    def score(self) -> float:
        """``value`` with a layer without key tokens read as no image contribution."""
        return 0.0 if self.flag is RatioFlag.EMPTY else self.value


class ModalityRatioSeries(BaseModel):
    layers: list[LayerRatio]

    def layer(self, layer: int) -> LayerRatio:
        return self.layers[layer - 1]


def modality_ratio(path: KeyTokenPath, config: ModelConfig) -> ModalityRatioSeries:
    """
    Summed accepted scores of image key tokens over those of text key tokens.

    Examples
    --------
    >>> from tblab.attribution.key_tokens import KeyToken, KeyTokenPath, LayerKeyTokens
    >>> from tblab.model.config import ModelConfig
    >>> config = ModelConfig(n_image_tokens=2, max_text_tokens=2, allow_shallow=True, n_layers=1)
    >>> tokens = [KeyToken(position=0, score=0.6, accepted=True),
    ...           KeyToken(position=3, score=0.3, accepted=True)]
    >>> path = KeyTokenPath(gamma=0.2, top_k=1, seq_len=4, n_image_tokens=2,
    ...                     layers=[LayerKeyTokens(layer=1, queue=tokens)], edges=[])
    >>> modality_ratio(path, config).layer(1).ratio
    2.0
    """
    series = []
    for layer_tokens in path.layers:
        image = text = 0.0
        for token in layer_tokens.accepted:
            if config.token_kind(token.position) is TokenKind.IMAGE:
                image += token.score
            else:
                text += token.score
        if text != 0.0:
            ratio, flag = image / text, RatioFlag.OK
        elif image != 0.0:
            ratio, flag = None, RatioFlag.NO_TEXT
        else:
            ratio, flag = None, RatioFlag.EMPTY
        series.append(
            LayerRatio(
                layer=layer_tokens.layer,
                image_score=image,
                text_score=text,
                ratio=ratio,
                flag=flag,
            )
        )
    return ModalityRatioSeries(layers=series)


def mean_layer_score(series: Sequence[ModalityRatioSeries], layer: int) -> float:
    """Mean ``score`` of one layer over the series of several inputs; NaN if none."""
    if not series:
        return math.nan
    return float(np.mean([s.layer(layer).score for s in series]))


def _modality_distributions(
    params: Parameters, inputs: Sequence[ModelInput], config: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Mean vocabulary distribution over image positions and over real text positions."""
    ids, features, has_image = encode_inputs(inputs, config)
    probs = forward_batch(params, ids, features, has_image, config).probs
    m = config.n_image_tokens
    image = probs[:, :m, :].mean(axis=1)
    real_text = (ids != PAD_ID)[:, :, None]
    text = (probs[:, m:, :] * real_text).sum(axis=1) / real_text.sum(axis=1)
    return image, text


def kl_modality_ratio(
    params: Parameters,
    params_post: Parameters,
    inputs: Sequence[ModelInput],
    config: ModelConfig,
) -> float:
    """
    ``KL(P_image || P_image') / KL(P_text || P_text')`` averaged over inputs.

    ``P_image`` is the mean over image positions of the softmax of each
    final-layer state projected to the vocabulary; ``P_text`` the same over
    the non-padding text positions. An input whose two divergences are both
    below ``1e-12`` contributes 1.0; otherwise the text divergence is
    floored at ``1e-12``.

    Raises
    ------
    DataError
        If ``inputs`` is empty.
    """
    if not inputs:
        msg = "kl_modality_ratio needs at least one input"
        raise DataError(msg)
    image_before, text_before = _modality_distributions(params, inputs, config)
    image_after, text_after = _modality_distributions(params_post, inputs, config)
    ratios = []
    for row in range(len(inputs)):
        kl_image = kl_divergence(image_before[row], image_after[row], PROB_EPS)
        kl_text = kl_divergence(text_before[row], text_after[row], PROB_EPS)
        if kl_image < KL_FLOOR and kl_text < KL_FLOOR:
            ratios.append(1.0)
        else:
            ratios.append(kl_image / max(kl_text, KL_FLOOR))
    return float(np.mean(ratios))


class SignTestResult(BaseModel):
    n_positive: int
    n_negative: int
    n_ties: int
    p_value: float
    alternative: str


def sign_test(
    before: Sequence[float],
    after: Sequence[float],
    alternative: Literal["greater", "less", "two-sided"] = "greater",
) -> SignTestResult:
    """
    Paired sign test on ``before - after`` with ties dropped.

    ``alternative="greater"`` tests whether ``before`` tends to exceed
    ``after`` (a drop). With no untied pair the p-value is 1.0.

    Examples
    --------
    >>> sign_test([1.0] * 10, [0.0] * 10).p_value < 0.01
    True
    """
    if len(before) != len(after):
        msg = "sign_test needs paired samples"
        raise DataError(msg)
    with np.errstate(invalid="ignore"):
        diffs = np.asarray(before, dtype=np.float64) - np.asarray(after, dtype=np.float64)
    diffs = diffs[~np.isnan(diffs)]
    positive = int(np.sum(diffs > 0))
    negative = int(np.sum(diffs < 0))
    ties = int(np.sum(diffs == 0))
    n = positive + negative
    p_value = 1.0 if n == 0 else float(binomtest(positive, n, 0.5, alternative=alternative).pvalue)
    return SignTestResult(
        n_positive=positive,
        n_negative=negative,
        n_ties=ties,
        p_value=p_value,
        alternative=alternative,
    )
