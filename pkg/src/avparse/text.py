"""Pseudo-label text descriptions, deterministic text embeddings, and text/feature fusion."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

AUDIO = "audio"
VISUAL = "visual"
MODALITIES = (AUDIO, VISUAL)

EMPTY_TEXT = {
    AUDIO: "There is no sound in the segment",
    VISUAL: "There is no event in the image",
}
_PREFIX = {AUDIO: "This is the sound of ", VISUAL: "This is the image of "}
_SUFFIX = {AUDIO: " audio event", VISUAL: " visual event"}


@dataclass(frozen=True)
class TextDescription:
    modality: str
    text: str


def _check_modality(modality: str) -> None:
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")


def render_text(label: Sequence[int] | np.ndarray, class_names: Sequence[str], modality: str) -> TextDescription:
    """Canonical sentence for one segment's pseudo label.

    Classes appear in ascending index order. A single event keeps the modality
    suffix ("... Dog audio event"); several events are joined with " and " and
    the suffix is dropped.
    """
    _check_modality(modality)
    label = np.asarray(label)
    if label.shape != (len(class_names),):
        raise ValueError(f"label has shape {label.shape}, expected ({len(class_names)},)")
    names = [class_names[i] for i in np.flatnonzero(label)]
    if not names:
        return TextDescription(modality, EMPTY_TEXT[modality])
    if len(names) == 1:
        return TextDescription(modality, _PREFIX[modality] + names[0] + _SUFFIX[modality])
    return TextDescription(modality, _PREFIX[modality] + " and ".join(names))


def parse_text(desc: TextDescription, class_names: Sequence[str]) -> list[int]:
    """Recover the class indices named in a canonical description."""
    modality, text = desc.modality, desc.text
    _check_modality(modality)
    if text == EMPTY_TEXT[modality]:
        return []
    prefix = _PREFIX[modality]
    if not text.startswith(prefix):
        raise ValueError(f"not a canonical {modality} description: {text!r}")
    body = text[len(prefix):]
    index = {name: i for i, name in enumerate(class_names)}
    if body.endswith(_SUFFIX[modality]) and body[: -len(_SUFFIX[modality])] in index:
        return [index[body[: -len(_SUFFIX[modality])]]]
    # class names may themselves contain " and ": merge pieces until they name a class
    pieces = body.split(" and ")
    found, current = [], None
    for piece in pieces:
        current = piece if current is None else current + " and " + piece
        if current in index:
            found.append(index[current])
            current = None
    if current is not None or not found:
        raise ValueError(f"unrecognised class names in {text!r}")
    return found


class TextEncoder:
    """Deterministic stand-in for a pretrained text branch.

    Each class owns a seeded Gaussian prototype per modality, plus one "none"
    prototype per modality for the empty templates. A description embeds to the
    L2-normalised sum of the prototypes of the classes it names.
    """

    def __init__(self, class_names: Sequence[str], d: int, seed: int = 0):
        self.class_names = list(class_names)
        self.d = d
        self.seed = seed
        self.prototypes = {}
        for m_idx, modality in enumerate(MODALITIES):
            rng = np.random.default_rng([seed, 7919, m_idx])
            self.prototypes[modality] = rng.standard_normal((len(self.class_names) + 1, d))
        self._cache: dict[tuple[str, str], np.ndarray] = {}

    def none_prototype(self, modality: str) -> np.ndarray:
        return self.prototypes[modality][-1]

    def embed(self, desc: TextDescription) -> np.ndarray:
        key = (desc.modality, desc.text)
        if key not in self._cache:
            classes = parse_text(desc, self.class_names)
            table = self.prototypes[desc.modality]
            v = table[classes].sum(axis=0) if classes else table[-1].copy()
            self._cache[key] = v / np.linalg.norm(v)
        return self._cache[key]

    def embed_labels(self, labels: np.ndarray, modality: str) -> np.ndarray:
        """Embed a (..., C) array of segment pseudo labels into (..., d)."""
        labels = np.asarray(labels)
        flat = labels.reshape(-1, labels.shape[-1])
        out = np.empty((flat.shape[0], self.d))
        for i, row in enumerate(flat):
            out[i] = self.embed(render_text(row, self.class_names, modality))
        return out.reshape(labels.shape[:-1] + (self.d,))


def embed_text(desc: TextDescription, class_names: Sequence[str], d: int, seed: int = 0) -> np.ndarray:
    return _encoder(tuple(class_names), d, seed).embed(desc)


@lru_cache(maxsize=16)
def _encoder(class_names: tuple[str, ...], d: int, seed: int) -> TextEncoder:
    return TextEncoder(class_names, d, seed)


# ---------------------------------------------------------------- fusion


@dataclass
class FusionParams:
    w1: Tensor  # (2d, m)
    b1: Tensor  # (m,)
    w2: Tensor  # (m, d)
    b2: Tensor  # (d,)
    ln_gain: Tensor  # (d,)
    ln_bias: Tensor  # (d,)
    w_out: Tensor  # (d, d)
    b_out: Tensor  # (d,)

    @classmethod
    def init(cls, d: int, m: int, rng: np.random.Generator, dtype=np.float64) -> "FusionParams":
        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return Tensor(rng.uniform(-lim, lim, (fan_in, fan_out)).astype(dtype), requires_grad=True)

        def const(n, value):
            return Tensor(np.full(n, value, dtype=dtype), requires_grad=True)

        return cls(glorot(2 * d, m), const(m, 0.0), glorot(m, d), const(d, 0.0),
                   const(d, 1.0), const(d, 0.0), glorot(d, d), const(d, 0.0))


def fuse(f: Tensor, e: Tensor, params: FusionParams) -> Tensor:
    """Concatenate features with text embeddings, run the two-layer MLP, LayerNorm, project to d."""
    if f.shape != e.shape:
        raise ad.ShapeError(f"fuse: features {f.shape} vs text embeddings {e.shape}")
    d = f.shape[-1]
    if params.w1.shape[0] != 2 * d or params.w_out.shape != (d, d):
        raise ad.ShapeError(f"fuse: parameters do not match feature dim {d}")
    z = ad.concat_lastdim(f, e)
    h = ad.relu(ad.linear(z, params.w1, params.b1))
    h = ad.linear(h, params.w2, params.b2)
    h = ad.layer_norm(h, params.ln_gain, params.ln_bias)
    return ad.linear(h, params.w_out, params.b_out)
