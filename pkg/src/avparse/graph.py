"""K-hop temporal graphs over video segments and multi-head residual graph attention."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor


@dataclass(frozen=True)
class TemporalGraph:
    T: int
    K: int
    adjacency: np.ndarray  # (T, T) bool

    @property
    def neighbors(self) -> list[list[int]]:
        return [np.flatnonzero(row).tolist() for row in self.adjacency]

    def edges(self) -> list[tuple[int, int]]:
        """Directed K-hop edges (t, t±k), k = 1..K, without self-loops."""
        return [(i, j) for i, j in zip(*np.nonzero(self.adjacency)) if i != j]

    def grid(self) -> str:
        return "\n".join(" ".join(str(int(v)) for v in row) for row in self.adjacency)


def build_graph(T: int, K: int) -> TemporalGraph:
    """Banded symmetric adjacency with self-loops: A[i, j] = 1 iff |i - j| <= K."""
    if T < 1:
        raise ValueError(f"a temporal graph needs at least one segment, got T={T}")
    if K < 0:
        raise ValueError(f"hop range must be non-negative, got K={K}")
    idx = np.arange(T)
    adjacency = np.abs(idx[:, None] - idx[None, :]) <= K
    adjacency.setflags(write=False)
    return TemporalGraph(T, K, adjacency)


def complete_graph(T: int) -> TemporalGraph:
    adjacency = np.ones((T, T), dtype=bool)
    adjacency.setflags(write=False)
    return TemporalGraph(T, T - 1, adjacency)


@dataclass
class GATLayerParams:
    w: Tensor  # (H, d, d), row-vector convention: n @ w[h]
    a_src: Tensor  # (H, d, 1), scores the receiving node i
    a_dst: Tensor  # (H, d, 1), scores the neighbour j
    bn_gain: Tensor  # (d,)
    bn_bias: Tensor  # (d,)
    bn: BatchNormState
    dropout: float = 0.1
    activation: str = "elu"  # or "identity"
    residual: bool = True
    batch_norm: bool = True

    @property
    def heads(self) -> int:
        return self.w.shape[0]

    @classmethod
    def init(cls, d: int, heads: int, rng: np.random.Generator, dtype=np.float64,
             dropout: float = 0.1) -> "GATLayerParams":
        if heads < 1:
            raise ValueError("need at least one attention head")
        lim = np.sqrt(6.0 / (2 * d))
        w = rng.uniform(-lim, lim, (heads, d, d)).astype(dtype)
        alim = np.sqrt(6.0 / (d + 1))
        a_src = rng.uniform(-alim, alim, (heads, d, 1)).astype(dtype)
        a_dst = rng.uniform(-alim, alim, (heads, d, 1)).astype(dtype)
        return cls(Tensor(w, requires_grad=True), Tensor(a_src, requires_grad=True),
                   Tensor(a_dst, requires_grad=True),
                   Tensor(np.ones(d, dtype=dtype), requires_grad=True),
                   Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
                   BatchNormState.create(d, dtype), dropout=dropout)


def _check_graph(nodes: Tensor, g: TemporalGraph) -> None:
    if nodes.ndim != 3:
        raise ad.ShapeError(f"expected nodes of shape (b, T, d), got {nodes.shape}")
    if nodes.shape[1] != g.T:
        raise ad.ShapeError(f"graph has T={g.T} but nodes have T={nodes.shape[1]}")


def gat_attention(nodes: Tensor, g: TemporalGraph, params: GATLayerParams) -> tuple[Tensor, Tensor]:
    """Per-head neighbour attention (b, H, T, T) and projected nodes (b, H, T, d)."""
    _check_graph(nodes, g)
    b, T, d = nodes.shape
    wn = ad.matmul(ad.reshape(nodes, (b, 1, T, d)), params.w)
    score_i = ad.matmul(wn, params.a_src)  # (b, H, T, 1)
    score_j = ad.swap_last(ad.matmul(wn, params.a_dst))  # (b, H, 1, T)
    logits = ad.leaky_relu(ad.add(score_i, score_j))
    alpha = ad.softmax_masked(logits, g.adjacency[None, None], axis=-1)
    return alpha, wn


def gat_layer(nodes: Tensor, g: TemporalGraph, params: GATLayerParams, mode: str = "eval",
              rng: np.random.Generator | None = None) -> Tensor:
    """One multi-head graph attention layer with residual, batch norm and message dropout."""
    alpha, wn = gat_attention(nodes, g, params)
    b, T, d = nodes.shape
    messages = ad.matmul(alpha, wn)  # (b, H, T, d)
    messages = ad.dropout(messages, params.dropout, mode, rng)
    out = ad.mean_pool_axis(messages, 1)
    if params.activation == "elu":
        out = ad.nonlin_eps(out)
    elif params.activation != "identity":
        raise ValueError(f"unknown activation {params.activation!r}")
    if params.residual:
        out = ad.add(out, nodes)
    if params.batch_norm:
        flat = ad.batch_norm_1d(ad.reshape(out, (b * T, d)), params.bn, mode,
                                params.bn_gain, params.bn_bias)
        out = ad.reshape(flat, (b, T, d))
    return out


@dataclass
class GlobalFusionParams:
    w1: Tensor  # (2d, d)
    b1: Tensor
    w2: Tensor  # (d, d)
    b2: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, dtype=np.float64) -> "GlobalFusionParams":
        lim1 = np.sqrt(6.0 / (3 * d))
        lim2 = np.sqrt(6.0 / (2 * d))
        return cls(Tensor(rng.uniform(-lim1, lim1, (2 * d, d)).astype(dtype), requires_grad=True),
                   Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
                   Tensor(rng.uniform(-lim2, lim2, (d, d)).astype(dtype), requires_grad=True),
                   Tensor(np.zeros(d, dtype=dtype), requires_grad=True))


def global_fuse(nodes: Tensor, params: GlobalFusionParams) -> Tensor:
    """Mean-pool the video over time and mix it back into every node with an MLP."""
    b, T, d = nodes.shape
    g = ad.broadcast_to(ad.mean_pool_axis(nodes, 1, keepdims=True), (b, T, d))
    h = ad.relu(ad.linear(ad.concat_lastdim(nodes, g), params.w1, params.b1))
    return ad.linear(h, params.w2, params.b2)


@dataclass
class StreamGraphParams:
    """Graph layers and global fusion for one modality stream."""

    hops: int
    layers: list[GATLayerParams]
    fuse: GlobalFusionParams

    @classmethod
    def init(cls, d: int, hops: int, heads: int, n_layers: int, rng: np.random.Generator,
             dtype=np.float64, dropout: float = 0.1) -> "StreamGraphParams":
        layers = [GATLayerParams.init(d, heads, rng, dtype, dropout) for _ in range(n_layers)]
        return cls(hops, layers, GlobalFusionParams.init(d, rng, dtype))


@dataclass
class MTGParams:
    audio: StreamGraphParams
    visual: StreamGraphParams
    enabled: bool = field(default=True)


def stream_forward(x: Tensor, params: StreamGraphParams, mode: str = "eval",
                   rng: np.random.Generator | None = None) -> Tensor:
    g = build_graph(x.shape[1], params.hops)
    for layer in params.layers:
        x = gat_layer(x, g, layer, mode, rng)
    return global_fuse(x, params.fuse)


def mtg_block(audio: Tensor, visual: Tensor, params: MTGParams, mode: str = "eval",
              rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Separate temporal graphs per modality; a disabled block passes inputs through."""
    if audio.shape != visual.shape:
        raise ad.ShapeError(f"audio {audio.shape} and visual {visual.shape} differ")
    if not params.enabled:
        return audio, visual
    return stream_forward(audio, params.audio, mode, rng), stream_forward(visual, params.visual, mode, rng)
