"""
Residual-stream Distance scores and per-layer key-token extraction.

Starting from the output token at the top layer, every queued token is
scored by how much its attention component explains its hidden state.
Tokens scoring at least ``gamma`` are accepted: their score is recorded and
their ``top_k`` strongest attention sources are queued at the same layer.
Tokens accepted at a layer seed the queue of the layer below.
"""

from collections import deque

import numpy as np
from pydantic import BaseModel, ConfigDict

from tblab.attribution.config import AttributionConfig
from tblab.core.standard_models.abstract.errors import DegenerateState
from tblab.model.transformer import ForwardTrace


def _cosine(x: np.ndarray, y: np.ndarray) -> float:
    norm = float(np.linalg.norm(x) * np.linalg.norm(y))
    if norm == 0.0:
        return 0.0
    return float(np.dot(x, y)) / norm


def distance_score(
    h: np.ndarray, a: np.ndarray, m: np.ndarray, h_prev: np.ndarray
) -> float:
    """
    ``|h - a| / (|h - h_prev| + |h - m| + |h - a|) + cos(h, a)``.

    Parameters
    ----------
    h, a, m, h_prev : np.ndarray
        Hidden state, attention component, MLP component and the state
        entering the layer, all of one position.

    Returns
    -------
    float
        A score in ``[-1, 2]``. The cosine of a zero vector is taken as 0.

    Raises
    ------
    DegenerateState
        If all three distances are zero.

    Examples
    --------
    >>> import numpy as np
    >>> v = lambda *x: np.array(x, dtype=float)
    >>> distance_score(v(2, 0), v(1, 0), v(0.5, 0), v(0.5, 0))
    1.25
    """
    if not (h.shape == a.shape == m.shape == h_prev.shape):
        msg = "distance_score needs vectors of one shape"
        raise ValueError(msg)
    to_attn = float(np.linalg.norm(h - a))
    denominator = float(np.linalg.norm(h - h_prev)) + float(np.linalg.norm(h - m)) + to_attn
    if denominator == 0.0:
        msg = "h equals its attention, MLP and previous-state components"
        raise DegenerateState(msg)
    return to_attn / denominator + _cosine(h, a)


class KeyToken(BaseModel):
    """A visited position and its Distance score at entry."""

    model_config = ConfigDict(frozen=True)

    position: int
    score: float
    accepted: bool


class ProvenanceEdge(BaseModel):
    """``(layer, source) -> (target_layer, target)``; ``kind`` is topk or seed."""

    model_config = ConfigDict(frozen=True)

    layer: int
    source: int
    target_layer: int
    target: int
    kind: str


class LayerKeyTokens(BaseModel):
    """``Q`` (every visited token) and ``S`` (accepted scores) of one layer."""

    layer: int
    queue: list[KeyToken]

    @property
    def positions(self) -> set[int]:
        return {t.position for t in self.queue}

    @property
    def accepted(self) -> list[KeyToken]:
        return [t for t in self.queue if t.accepted]

    @property
    def scores(self) -> list[float]:
        return [t.score for t in self.accepted]


class KeyTokenPath(BaseModel):
    """Key tokens of every layer of one forward pass, top layer last."""

    gamma: float
    top_k: int
    seq_len: int
    n_image_tokens: int
    layers: list[LayerKeyTokens]
    edges: list[ProvenanceEdge]

    def layer(self, layer: int) -> LayerKeyTokens:
        return self.layers[layer - 1]

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def _top_sources(row: np.ndarray, k: int) -> list[int]:
    order = np.argsort(-row, kind="stable")[:k]
    return [int(j) for j in order if row[j] > 0]


def extract_key_tokens(trace: ForwardTrace, config: AttributionConfig) -> KeyTokenPath:
    """
    Per-layer key tokens of ``trace``, from the output token downward.

    Each (layer, position) is scored at most once, so every layer costs at
    most ``N`` scores and ``N * top_k`` expansions.

    Parameters
    ----------
    trace : ForwardTrace
        A complete trace from :func:`~tblab.model.transformer.forward_with_trace`.
    config : AttributionConfig
        ``gamma`` and ``top_k``.

    Returns
    -------
    KeyTokenPath
        ``Q`` and ``S`` per layer plus the edges that put every token in
        its queue.
    """
    n_layers, seq_len = trace.n_layers, trace.seq_len
    output = seq_len - 1
    layers: dict[int, LayerKeyTokens] = {}
    edges: list[ProvenanceEdge] = []
    seeds = [output]

    for layer in range(n_layers, 0, -1):
        queue = deque(seeds)
        queued = set(seeds)
        visited: list[KeyToken] = []
        attention = trace.attention[layer - 1]
        while queue:
            position = queue.popleft()
            h, a, m, h_prev = trace.hook(layer, position)
            score = distance_score(h, a, m, h_prev)
            accepted = score >= config.gamma
            visited.append(KeyToken(position=position, score=score, accepted=accepted))
            if not accepted:
                continue
            for source in _top_sources(attention[position], config.top_k):
                if source in queued:
                    continue
                queued.add(source)
                queue.append(source)
                edges.append(
                    ProvenanceEdge(
                        layer=layer,
                        source=position,
                        target_layer=layer,
                        target=source,
                        kind="topk",
                    )
                )
        layers[layer] = LayerKeyTokens(layer=layer, queue=visited)
        seeds = [t.position for t in visited if t.accepted]
        if layer > 1:
            edges.extend(
                ProvenanceEdge(
                    layer=layer,
                    source=p,
                    target_layer=layer - 1,
                    target=p,
                    kind="seed",
                )
                for p in seeds
            )

    return KeyTokenPath(
        gamma=config.gamma,
        top_k=config.top_k,
        seq_len=seq_len,
        n_image_tokens=trace.n_image_tokens,
        layers=[layers[layer] for layer in range(1, n_layers + 1)],
        edges=edges,
    )
