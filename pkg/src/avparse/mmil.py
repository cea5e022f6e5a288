"""Segment classifier and attentive multimodal multiple-instance pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class MMILParams:
    """Classifier and attention projections, shared by both modalities."""

    w_cls: Tensor  # (d, C)
    b_cls: Tensor
    w_time: Tensor  # (d, C)
    b_time: Tensor
    w_mod: Tensor  # (d, C)
    b_mod: Tensor

    @classmethod
    def init(cls, d: int, n_classes: int, rng: np.random.Generator, dtype=np.float64) -> "MMILParams":
        lim = np.sqrt(6.0 / (d + n_classes))

        def w():
            return Tensor(rng.uniform(-lim, lim, (d, n_classes)).astype(dtype), requires_grad=True)

        def b():
            return Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True)

        return cls(w(), b(), w(), b(), w(), b())


@dataclass
class SegmentProbs:
    audio: Tensor  # (b, T, C)
    visual: Tensor


@dataclass
class VideoPreds:
    audio: Tensor  # (b, C)
    visual: Tensor
    joint: Tensor
    time_weights: Tensor  # (b, 2, T, C), softmax over T
    modality_weights: Tensor  # (b, 2, C), softmax over modalities


def classify_segments(audio: Tensor, visual: Tensor, params: MMILParams) -> SegmentProbs:
    return SegmentProbs(ad.sigmoid(ad.linear(audio, params.w_cls, params.b_cls)),
                        ad.sigmoid(ad.linear(visual, params.w_cls, params.b_cls)))


def mmil_pool(probs: SegmentProbs, audio: Tensor, visual: Tensor, params: MMILParams) -> VideoPreds:
    """Class-aware attention over segments, then over the two modalities.

    The modality logits come from the time-averaged stream features, so every
    video-level output is a convex combination of segment probabilities.
    """
    x = ad.stack([audio, visual], axis=1)  # (b, 2, T, d)
    p = ad.stack([probs.audio, probs.visual], axis=1)  # (b, 2, T, C)
    w_time = ad.softmax(ad.linear(x, params.w_time, params.b_time), axis=2)
    per_modality = ad.sum_axis(ad.mul(w_time, p), axis=2)  # (b, 2, C)
    mod_logits = ad.linear(ad.mean_pool_axis(x, 2), params.w_mod, params.b_mod)  # (b, 2, C)
    w_mod = ad.softmax(mod_logits, axis=1)
    joint = ad.sum_axis(ad.mul(w_mod, per_modality), axis=1)
    return VideoPreds(ad.take(per_modality, 0, axis=1), ad.take(per_modality, 1, axis=1),
                      joint, w_time, w_mod)
