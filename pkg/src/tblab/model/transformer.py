"""Instrumented multimodal transformer with manual reverse-mode differentiation.

The subject model reads ``m`` image-prefix tokens (a linear projection of an
image feature vector, or a learned null-image embedding when the image is
absent) followed by ``n`` left-padded text tokens, and predicts the answer
token at the last position. Each layer is a parallel block::

    u      = rmsnorm(h_prev)
    a      = Attn(u)
    m      = MLP(u)
    h_new  = h_prev + a + m

so the residual decomposition ``h = m + a + h_prev`` is exact. Image
positions attend bidirectionally among themselves; text positions see the
whole image prefix and the text up to themselves.

Everything is computed in float64 on batches of shape ``(B, N, d)``; the
single-input entry points are batches of one.
"""

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from tblab.core.standard_models.abstract.errors import (
    InvalidMask,
    InvalidToken,
    NumericalOverflow,
    TraceMismatch,
)
from tblab.model.config import ModelConfig
from tblab.model.params import Gradients, Parameters

PAD_ID = 0
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelInput:
    """One (image, question) query. ``image_features is None`` means ABSENT."""

    text_ids: tuple[int, ...]
    image_features: np.ndarray | None = None

    @property
    def has_image(self) -> bool:
        return self.image_features is not None


@dataclass
class _LayerCache:
    h_prev: np.ndarray
    u: np.ndarray
    r: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    z: np.ndarray
    attn_out: np.ndarray
    pre: np.ndarray
    act: np.ndarray
    mlp_out: np.ndarray
    h_new: np.ndarray
    suppressed: np.ndarray | None = None


@dataclass
class BatchCache:
    """Everything the backward pass needs from one batched forward pass."""

    params_token: int
    ids: np.ndarray
    features: np.ndarray
    has_image: np.ndarray
    layers: list[_LayerCache]
    h_final: np.ndarray
    r_final: np.ndarray
    hf: np.ndarray
    logits: np.ndarray
    probs: np.ndarray

    @property
    def answer_probs(self) -> np.ndarray:
        """Next-token distributions at the output position, shape ``(B, V)``."""
        return self.probs[:, -1, :]


@dataclass
class ForwardTrace:
    """
    Per-layer, per-position capture of one forward pass.

    Layer ``l`` (1-based) is stored at index ``l - 1``. Every array except
    ``attention``, ``logits`` and ``probs`` has shape ``(L, N, d_model)``.

    Attributes
    ----------
    h_prev, attn_out, mlp_out, h_new : np.ndarray
        ``h^{l-1}``, ``a^l``, ``m^l`` and ``h^l`` per layer and position.
    attention : np.ndarray
        Head-averaged attention, shape ``(L, N, N)``, rows sum to one.
    logits, probs : np.ndarray
        Output projection of every final-layer position, shape ``(N, V)``.
    """

    h_prev: np.ndarray
    attn_out: np.ndarray
    mlp_out: np.ndarray
    h_new: np.ndarray
    attention: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    n_image_tokens: int
    head_aggregation: str = "mean"
    cache: BatchCache | None = field(default=None, repr=False)

    @property
    def n_layers(self) -> int:
        return self.h_new.shape[0]

    @property
    def seq_len(self) -> int:
        return self.h_new.shape[1]

    @property
    def answer_probs(self) -> np.ndarray:
        return self.probs[-1]

    def hook(self, layer: int, position: int) -> tuple[np.ndarray, ...]:
        """``(h, a, m, h_prev)`` of ``position`` at ``layer`` (1-based)."""
        i = layer - 1
        return (
            self.h_new[i, position],
            self.attn_out[i, position],
            self.mlp_out[i, position],
            self.h_prev[i, position],
        )


def attention_mask(config: ModelConfig) -> np.ndarray:
    """Boolean ``(N, N)`` matrix: ``mask[i, j]`` is True when ``i`` may read ``j``."""
    n_total, m = config.seq_len, config.n_image_tokens
    rows = np.arange(n_total)[:, None]
    cols = np.arange(n_total)[None, :]
    return (cols < m) | ((rows >= m) & (cols >= m) & (cols <= rows))


def pad_text(text_ids: Sequence[int], config: ModelConfig) -> np.ndarray:
    """Left-pad ``text_ids`` with the pad id to ``max_text_tokens``."""
    n = config.max_text_tokens
    if len(text_ids) == 0 or len(text_ids) > n:
        msg = f"question must hold 1..{n} tokens, got {len(text_ids)}"
        raise InvalidToken(msg)
    ids = np.asarray(text_ids, dtype=np.int64)
    bad = (ids < 0) | (ids >= config.vocab_size)
    if bad.any():
        msg = f"token id {int(ids[bad][0])} outside vocabulary of size {config.vocab_size}"
        raise InvalidToken(msg)
    return np.concatenate([np.full(n - len(ids), PAD_ID, dtype=np.int64), ids])


def encode_inputs(
    inputs: Sequence[ModelInput], config: ModelConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack inputs into ``(ids, features, has_image)`` batch arrays."""
    ids = np.stack([pad_text(x.text_ids, config) for x in inputs])
    features = np.zeros((len(inputs), config.image_feature_dim))
    has_image = np.zeros(len(inputs), dtype=bool)
    for row, x in enumerate(inputs):
        if x.image_features is not None:
            feats = np.asarray(x.image_features, dtype=np.float64)
            if feats.shape != (config.image_feature_dim,):
                msg = f"image features must have shape ({config.image_feature_dim},), got {feats.shape}"
                raise InvalidToken(msg)
            features[row] = feats
            has_image[row] = True
    return ids, features, has_image


def _rmsnorm(x: np.ndarray, gain: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * r * gain, r


def _rmsnorm_backward(
    dy: np.ndarray, x: np.ndarray, r: np.ndarray, gain: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    xhat = x * r
    dgain = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    dx = r * (dxhat - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
    return dx, dgain


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (
        1.0 + 3 * 0.044715 * x * x
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def _check_finite(h: np.ndarray, layer: int) -> None:
    finite = np.isfinite(h).all(axis=-1)
    if not finite.all():
        _, position = np.argwhere(~finite)[0]
        raise NumericalOverflow(layer=layer, position=int(position))


def _split_heads(t: np.ndarray, n_heads: int) -> np.ndarray:
    b, n, d = t.shape
    return t.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(t: np.ndarray) -> np.ndarray:
    b, h, n, dh = t.shape
    return t.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def forward_batch(
    params: Parameters,
    ids: np.ndarray,
    features: np.ndarray,
    has_image: np.ndarray,
    config: ModelConfig,
    suppress: Mapping[int, np.ndarray] | None = None,
) -> BatchCache:
    """
    Batched forward pass returning the full activation cache.

    Parameters
    ----------
    params : Parameters
        Parameter snapshot.
    ids, features, has_image : np.ndarray
        Outputs of :func:`encode_inputs`.
    config : ModelConfig
        Model configuration.
    suppress : Mapping[int, np.ndarray] | None
        Optional per-layer boolean ``(B, N)`` masks; the hidden state of a
        suppressed position is zeroed before that layer computes.

    Returns
    -------
    BatchCache
        Activations of every layer plus final logits and probabilities.
    """
    b = ids.shape[0]
    m, d, n_heads = config.n_image_tokens, config.d_model, config.n_heads
    eps = config.norm_eps
    scale = 1.0 / math.sqrt(config.head_dim)
    allowed = attention_mask(config)

    image = (features @ params["image_proj.weight"] + params["image_proj.bias"])
    image = image.reshape(b, m, d)
    image = np.where(has_image[:, None, None], image, params["null_image"][None])
    text = params["tok_embed"][ids]
    h = np.concatenate([image, text], axis=1) + params["pos_embed"][None]
    _check_finite(h, layer=0)

    layers = []
    for layer in range(1, config.n_layers + 1):
        prefix = f"layers.{layer}"
        suppressed = None
        if suppress is not None and layer in suppress:
            suppressed = suppress[layer]
            h = np.where(suppressed[:, :, None], 0.0, h)
        h_prev = h
        u, r = _rmsnorm(h_prev, params[f"{prefix}.norm.gain"], eps)
        q = _split_heads(u @ params[f"{prefix}.attn.q.weight"], n_heads)
        k = _split_heads(u @ params[f"{prefix}.attn.k.weight"], n_heads)
        v = _split_heads(u @ params[f"{prefix}.attn.v.weight"], n_heads)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        scores = np.where(allowed, scores, -np.inf)
        probs = softmax(scores)
        z = _merge_heads(probs @ v)
        attn_out = z @ params[f"{prefix}.attn.o.weight"]
        pre = u @ params[f"{prefix}.mlp.fc_in.weight"] + params[f"{prefix}.mlp.fc_in.bias"]
        act = _gelu(pre)
        mlp_out = act @ params[f"{prefix}.mlp.fc_out.weight"] + params[f"{prefix}.mlp.fc_out.bias"]
        h = h_prev + attn_out + mlp_out
        _check_finite(h, layer=layer)
        layers.append(
            _LayerCache(
                h_prev=h_prev, u=u, r=r, q=q, k=k, v=v, probs=probs, z=z,
                attn_out=attn_out, pre=pre, act=act, mlp_out=mlp_out,
                h_new=h, suppressed=suppressed,
            )
        )

    hf, r_final = _rmsnorm(h, params["final_norm.gain"], eps)
    logits = hf @ params["unembed.weight"] + params["unembed.bias"]
    return BatchCache(
        params_token=params.token,
        ids=ids,
        features=features,
        has_image=has_image,
        layers=layers,
        h_final=h,
        r_final=r_final,
        hf=hf,
        logits=logits,
        probs=softmax(logits),
    )


def backward_batch(
    params: Parameters, cache: BatchCache, dlogits: np.ndarray, config: ModelConfig
) -> Gradients:
    """
    Reverse-mode pass from a gradient on the output-position logits.

    ``dlogits`` has shape ``(B, V)`` and is the derivative of the (summed)
    scalar loss with respect to the logits at position ``N - 1`` of every
    batch row. Cross-entropy passes ``p - onehot``; ``KL(p || q)`` with
    respect to the edited model's logits passes ``q - p``.
    """
    if cache.params_token != params.token:
        msg = "trace was produced by a different parameter snapshot"
        raise TraceMismatch(msg)
    b = cache.ids.shape[0]
    if dlogits.shape != (b, config.vocab_size):
        msg = f"dlogits shape {dlogits.shape} != {(b, config.vocab_size)}"
        raise TraceMismatch(msg)

    m, d, n_heads = config.n_image_tokens, config.d_model, config.n_heads
    scale = 1.0 / math.sqrt(config.head_dim)
    grads = Gradients.zeros_like(params)
    g = grads._tensors  # noqa: SLF001

    hf_last = cache.hf[:, -1, :]
    g["unembed.weight"] += hf_last.T @ dlogits
    g["unembed.bias"] += dlogits.sum(axis=0)
    dhf = dlogits @ params["unembed.weight"].T
    dx, dgain = _rmsnorm_backward(
        dhf, cache.h_final[:, -1, :], cache.r_final[:, -1, :], params["final_norm.gain"]
    )
    g["final_norm.gain"] += dgain
    dh = np.zeros_like(cache.h_final)
    dh[:, -1, :] = dx

    for layer in range(config.n_layers, 0, -1):
        c = cache.layers[layer - 1]
        prefix = f"layers.{layer}"
        n_total = c.h_prev.shape[1]
        d_ff = c.act.shape[-1]

        # MLP branch
        g[f"{prefix}.mlp.fc_out.weight"] += c.act.reshape(-1, d_ff).T @ dh.reshape(-1, d)
        g[f"{prefix}.mlp.fc_out.bias"] += dh.sum(axis=(0, 1))
        dpre = (dh @ params[f"{prefix}.mlp.fc_out.weight"].T) * _gelu_grad(c.pre)
        g[f"{prefix}.mlp.fc_in.weight"] += c.u.reshape(-1, d).T @ dpre.reshape(-1, d_ff)
        g[f"{prefix}.mlp.fc_in.bias"] += dpre.sum(axis=(0, 1))
        du = dpre @ params[f"{prefix}.mlp.fc_in.weight"].T

        # attention branch
        g[f"{prefix}.attn.o.weight"] += c.z.reshape(-1, d).T @ dh.reshape(-1, d)
        dz = _split_heads(dh @ params[f"{prefix}.attn.o.weight"].T, n_heads)
        dprobs = dz @ c.v.transpose(0, 1, 3, 2)
        dv = c.probs.transpose(0, 1, 3, 2) @ dz
        dscores = c.probs * (dprobs - np.sum(dprobs * c.probs, axis=-1, keepdims=True))
        dscores *= scale
        dq = dscores @ c.k
        dk = dscores.transpose(0, 1, 3, 2) @ c.q
        u_flat = c.u.reshape(-1, d)
        for proj, dproj in (("q", dq), ("k", dk), ("v", dv)):
            merged = _merge_heads(dproj)
            g[f"{prefix}.attn.{proj}.weight"] += u_flat.T @ merged.reshape(b * n_total, d)
            du = du + merged @ params[f"{prefix}.attn.{proj}.weight"].T

        dx, dgain = _rmsnorm_backward(du, c.h_prev, c.r, params[f"{prefix}.norm.gain"])
        g[f"{prefix}.norm.gain"] += dgain
        dh = dh + dx
        if c.suppressed is not None:
            dh = np.where(c.suppressed[:, :, None], 0.0, dh)

    g["pos_embed"] += dh.sum(axis=0)
    np.add.at(g["tok_embed"], cache.ids.reshape(-1), dh[:, m:, :].reshape(-1, d))
    d_image = dh[:, :m, :]
    has = cache.has_image
    if has.any():
        flat = d_image[has].reshape(int(has.sum()), m * d)
        g["image_proj.weight"] += cache.features[has].T @ flat
        g["image_proj.bias"] += flat.sum(axis=0)
    if (~has).any():
        g["null_image"] += d_image[~has].sum(axis=0)
    return grads


def _trace_from_cache(
    cache: BatchCache, config: ModelConfig, row: int = 0
) -> ForwardTrace:
    layers = cache.layers
    return ForwardTrace(
        h_prev=np.stack([c.h_prev[row] for c in layers]),
        attn_out=np.stack([c.attn_out[row] for c in layers]),
        mlp_out=np.stack([c.mlp_out[row] for c in layers]),
        h_new=np.stack([c.h_new[row] for c in layers]),
        attention=np.stack([c.probs[row].mean(axis=0) for c in layers]),
        logits=cache.logits[row],
        probs=cache.probs[row],
        n_image_tokens=config.n_image_tokens,
        cache=cache,
    )


def forward_with_trace(
    params: Parameters,
    image_features: np.ndarray | None,
    text_tokens: Sequence[int],
    config: ModelConfig,
) -> tuple[np.ndarray, ForwardTrace]:
    """
    Run one query and capture the residual stream.

    Parameters
    ----------
    params : Parameters
        Parameter snapshot.
    image_features : np.ndarray | None
        Image feature vector, or None for an absent image (the null-image
        embedding fills the image positions).
    text_tokens : Sequence[int]
        Question token ids, at most ``max_text_tokens`` of them.
    config : ModelConfig
        Model configuration.

    Returns
    -------
    tuple[np.ndarray, ForwardTrace]
        The answer distribution over the vocabulary at position ``N - 1``
        and the full trace.

    Raises
    ------
    InvalidToken
        If a token id is outside the vocabulary.
    NumericalOverflow
        If an activation becomes non-finite.
    """
    ids, features, has_image = encode_inputs(
        [ModelInput(tuple(text_tokens), image_features)], config
    )
    cache = forward_batch(params, ids, features, has_image, config)
    trace = _trace_from_cache(cache, config)
    return trace.answer_probs, trace


def backward(
    params: Parameters,
    trace: ForwardTrace,
    target_token: int,
    config: ModelConfig,
) -> Gradients:
    """
    Gradient of ``-log p(target_token)`` at the output position.

    Raises
    ------
    TraceMismatch
        If ``trace`` was produced with a different parameter snapshot or has
        inconsistent shapes.
    """
    if trace.cache is None:
        msg = "trace carries no activation cache"
        raise TraceMismatch(msg)
    if not 0 <= target_token < config.vocab_size:
        msg = f"target token {target_token} outside vocabulary"
        raise InvalidToken(msg)
    if trace.n_layers != config.n_layers or trace.seq_len != config.seq_len:
        msg = "trace shape does not match the model config"
        raise TraceMismatch(msg)
    dlogits = trace.cache.answer_probs.copy()
    dlogits[0, target_token] -= 1.0
    return backward_batch(params, trace.cache, dlogits, config)


def validate_mask_plan(
    mask_plan: Mapping[int, set[int] | frozenset[int]], config: ModelConfig
) -> None:
    """Raise :class:`InvalidMask` for unknown layers/positions or a masked output."""
    for layer, positions in mask_plan.items():
        if not 1 <= layer <= config.n_layers:
            msg = f"mask plan names layer {layer}, model has 1..{config.n_layers}"
            raise InvalidMask(msg)
        if config.output_position in positions:
            msg = f"mask plan suppresses the output position at layer {layer}"
            raise InvalidMask(msg)
        if any(not 0 <= p < config.seq_len for p in positions):
            msg = f"mask plan names a position outside 0..{config.seq_len - 1}"
            raise InvalidMask(msg)


def forward_masked(
    params: Parameters,
    model_input: ModelInput,
    mask_plan: Mapping[int, set[int] | frozenset[int]],
    config: ModelConfig,
) -> np.ndarray:
    """
    Answer distribution with suppressed positions zeroed at chosen layers.

    ``mask_plan`` maps a 1-based layer to the positions whose hidden state is
    replaced by the zero vector before that layer computes. An empty plan is
    exactly :func:`forward_with_trace`.

    Raises
    ------
    InvalidMask
        If the plan suppresses the output position ``N - 1``.
    """
    validate_mask_plan(mask_plan, config)
    ids, features, has_image = encode_inputs([model_input], config)
    suppress = None
    if mask_plan:
        suppress = {}
        for layer, positions in mask_plan.items():
            row = np.zeros((1, config.seq_len), dtype=bool)
            row[0, sorted(positions)] = True
            suppress[layer] = row
    cache = forward_batch(params, ids, features, has_image, config, suppress)
    return cache.answer_probs[0]


def predict_batch(
    params: Parameters,
    inputs: Sequence[ModelInput],
    config: ModelConfig,
    batch_size: int = 256,
) -> np.ndarray:
    """Answer distributions for many inputs, shape ``(len(inputs), V)``."""
    out = np.zeros((len(inputs), config.vocab_size))
    for start in range(0, len(inputs), batch_size):
        chunk = inputs[start : start + batch_size]
        ids, features, has_image = encode_inputs(chunk, config)
        cache = forward_batch(params, ids, features, has_image, config)
        out[start : start + len(chunk)] = cache.answer_probs
    return out
