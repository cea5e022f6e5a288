"""Hybrid self/cross attention between the audio and visual segment streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class AttnProjections:
    q: Tensor
    k: Tensor
    v: Tensor


@dataclass
class StreamAttnParams:
    self_attn: AttnProjections
    cross_attn: AttnProjections


@dataclass
class HybridAttnParams:
    audio: StreamAttnParams
    visual: StreamAttnParams

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, dtype=np.float64) -> "HybridAttnParams":
        lim = np.sqrt(6.0 / (2 * d))

        def proj():
            q, k, v = (rng.uniform(-lim, lim, (d, d)).astype(dtype) for _ in range(3))
            # zero values: the block starts as the identity and grows cross-segment flow from there
            return AttnProjections(*(Tensor(w, requires_grad=True) for w in (q, k, np.zeros_like(v))))

        return cls(StreamAttnParams(proj(), proj()), StreamAttnParams(proj(), proj()))

    def swapped(self) -> "HybridAttnParams":
        return HybridAttnParams(self.visual, self.audio)


def attention(query: Tensor, context: Tensor, proj: AttnProjections) -> tuple[Tensor, Tensor]:
    """Single-head scaled dot-product attention; returns (output, weights over T)."""
    d = query.shape[-1]
    q = ad.matmul(query, proj.q)
    k = ad.matmul(context, proj.k)
    v = ad.matmul(context, proj.v)
    scores = ad.mul(ad.matmul(q, ad.swap_last(k)), 1.0 / np.sqrt(d))
    weights = ad.softmax(scores, axis=-1)
    return ad.matmul(weights, v), weights


def hybrid_attend(audio: Tensor, visual: Tensor, params: HybridAttnParams) -> tuple[Tensor, Tensor]:
    if audio.shape != visual.shape:
        raise ad.ShapeError(f"audio {audio.shape} and visual {visual.shape} differ")

    def stream(x, other, p: StreamAttnParams):
        self_out, _ = attention(x, x, p.self_attn)
        cross_out, _ = attention(x, other, p.cross_attn)
        return ad.add(ad.add(x, self_out), cross_out)

    return stream(audio, visual, params.audio), stream(visual, audio, params.visual)
