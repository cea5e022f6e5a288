"""End-to-end parser: text fusion -> hybrid attention -> temporal graphs -> MMIL head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .aggregation import HybridAttnParams, hybrid_attend
from .autodiff import BatchNormState, Tensor
from .data import Dataset
from .graph import MTGParams, StreamGraphParams, mtg_block
from .mmil import MMILParams, SegmentProbs, VideoPreds, classify_segments, mmil_pool
from .text import FusionParams, TextEncoder, fuse

PROB_CLAMP = 1e-7


@dataclass
class ModelConfig:
    d: int = 64
    n_classes: int = 8
    hidden: int | None = None  # fusion MLP width; None means d
    hops_audio: int = 4
    hops_visual: int = 4
    heads: int = 4
    layers: int = 1
    dropout: float = 0.1
    threshold: float = 0.5
    use_te: bool = True
    use_mtg: bool = True
    dtype: str = "float32"

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class ModelParams:
    fusion_audio: FusionParams
    fusion_visual: FusionParams
    hybrid: HybridAttnParams
    mtg: MTGParams
    head: MMILParams

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        # one stream per block so toggling a module never shifts another's initial weights
        def rng(i):
            return np.random.default_rng([seed, 17, i])

        d, dt = config.d, config.np_dtype
        m = config.hidden or d
        mtg = MTGParams(
            StreamGraphParams.init(d, config.hops_audio, config.heads, config.layers, rng(3), dt, config.dropout),
            StreamGraphParams.init(d, config.hops_visual, config.heads, config.layers, rng(4), dt, config.dropout),
            enabled=config.use_mtg,
        )
        return cls(FusionParams.init(d, m, rng(0), dt), FusionParams.init(d, m, rng(1), dt),
                   HybridAttnParams.init(d, rng(2), dt), mtg, MMILParams.init(d, config.n_classes, rng(5), dt))


def _walk(obj, prefix: str) -> Iterator[tuple[str, object]]:
    if isinstance(obj, (Tensor, BatchNormState)):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from _walk(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, list):
        for i, item in enumerate(obj):
            yield from _walk(item, f"{prefix}.{i}")


def named_parameters(params) -> list[tuple[str, Tensor]]:
    return [(n, t) for n, t in _walk(params, "") if isinstance(t, Tensor)]


def named_buffers(params) -> list[tuple[str, np.ndarray]]:
    out = []
    for name, obj in _walk(params, ""):
        if isinstance(obj, BatchNormState):
            out.append((f"{name}.running_mean", obj.running_mean))
            out.append((f"{name}.running_var", obj.running_var))
    return out


def load_buffers(params, buffers: dict[str, np.ndarray]) -> None:
    for name, obj in _walk(params, ""):
        if isinstance(obj, BatchNormState):
            obj.running_mean = buffers[f"{name}.running_mean"].copy()
            obj.running_var = buffers[f"{name}.running_var"].copy()


@dataclass
class Batch:
    audio: np.ndarray  # (b, T, d)
    visual: np.ndarray
    text_audio: np.ndarray  # (b, T, d)
    text_visual: np.ndarray
    weak: np.ndarray | None = None  # (b, C)


@dataclass
class Prepared:
    """A dataset split with text embeddings attached, cast to the model dtype."""

    data: Dataset
    text_audio: np.ndarray
    text_visual: np.ndarray
    dtype: np.dtype = field(default=np.dtype("float32"))

    @classmethod
    def build(cls, data: Dataset, encoder: TextEncoder, dtype="float32") -> "Prepared":
        return cls(data, encoder.embed_labels(data.pseudo_audio, "audio"),
                   encoder.embed_labels(data.pseudo_visual, "visual"), np.dtype(dtype))

    def __len__(self) -> int:
        return len(self.data)

    def batch(self, idx) -> Batch:
        dt = self.dtype
        return Batch(self.data.audio[idx].astype(dt), self.data.visual[idx].astype(dt),
                     self.text_audio[idx].astype(dt), self.text_visual[idx].astype(dt),
                     self.data.weak[idx].astype(dt))


@dataclass
class Output:
    probs: SegmentProbs
    preds: VideoPreds


def forward(params: ModelParams, batch: Batch, config: ModelConfig, mode: str = "eval",
            rng: np.random.Generator | None = None) -> Output:
    a, v = Tensor(batch.audio), Tensor(batch.visual)
    if config.use_te:
        a = fuse(a, Tensor(batch.text_audio), params.fusion_audio)
        v = fuse(v, Tensor(batch.text_visual), params.fusion_visual)
    a, v = hybrid_attend(a, v, params.hybrid)
    if config.use_mtg:
        a, v = mtg_block(a, v, params.mtg, mode, rng)
    probs = classify_segments(a, v, params.head)
    return Output(probs, mmil_pool(probs, a, v, params.head))


def bce(p: Tensor, y) -> Tensor:
    p = ad.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    y = ad.as_tensor(y, p)
    ll = ad.add(ad.mul(y, ad.log(p)), ad.mul(ad.sub(1.0, y), ad.log(ad.sub(1.0, p))))
    return ad.mul(ad.mean(ll), -1.0)


def weak_bce_loss(p_audio: Tensor, p_visual: Tensor, p_joint: Tensor, y) -> Tensor:
    """Sum of mean BCEs of the three video-level predictions against the weak label."""
    return ad.add(ad.add(bce(p_audio, y), bce(p_visual, y)), bce(p_joint, y))


def predict(params: ModelParams, prepared: Prepared, config: ModelConfig,
            batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode segment probabilities (N, T, C) for audio and visual."""
    outs_a, outs_v = [], []
    for start in range(0, len(prepared), batch_size):
        out = forward(params, prepared.batch(slice(start, start + batch_size)), config, "eval")
        outs_a.append(out.probs.audio.data)
        outs_v.append(out.probs.visual.data)
    return np.concatenate(outs_a), np.concatenate(outs_v)
