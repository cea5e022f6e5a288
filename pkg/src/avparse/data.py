"""Synthetic weakly-labelled audio-visual videos.

Each class owns an orthogonal prototype per modality. A video holds one to
``max_events`` events; every event is audio-only, visual-only or audio-visual
(with the two modalities possibly covering different segment intervals), and
segment features are the sum of the active prototypes plus Gaussian noise.
Pseudo labels are the ground truth with independent cell flips.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import container
from .metrics import EventInstance

DEFAULT_CLASSES = (
    "Speech", "Car", "Cheering", "Dog", "Cat", "Frying_(food)", "Basketball_bounce", "Fire_alarm",
    "Chainsaw", "Cello", "Banjo", "Singing", "Chicken_rooster", "Violin_fiddle", "Vacuum_cleaner",
    "Baby_laughter", "Accordion", "Lawn_mower", "Motorcycle", "Helicopter", "Acoustic_guitar",
    "Telephone_bell_ringing", "Baby_cry_infant_cry", "Blender", "Clapping",
)
SPLITS = ("train", "test")
PATTERNS = ("audio", "visual", "both")


class ManifestError(ValueError):
    pass


@dataclass
class DatasetManifest:
    class_names: list[str] = field(default_factory=lambda: list(DEFAULT_CLASSES[:8]))
    T: int = 10
    d: int = 64
    n_videos: int = 500
    n_test: int = 200
    feature_sigma: float = 0.1
    flip_rate: float = 0.1
    seed: int = 0
    max_events: int = 3
    min_event_len: int = 3
    max_event_len: int = 10
    pattern_probs: list[float] = field(default_factory=lambda: [0.1, 0.1, 0.8])
    sync_prob: float = 0.5

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def validate(self) -> "DatasetManifest":
        C = self.n_classes
        problems = []
        if C < 1 or len(set(self.class_names)) != C:
            problems.append("class_names must be non-empty and distinct")
        if self.T < 1 or self.d < 1:
            problems.append("T and d must be positive")
        if C > self.d:
            problems.append(f"orthogonal prototypes need n_classes <= d ({C} > {self.d})")
        if self.n_videos < 1 or self.n_test < 0:
            problems.append("n_videos must be positive and n_test non-negative")
        if self.feature_sigma < 0:
            problems.append("feature_sigma must be >= 0")
        if not 0 <= self.flip_rate <= 1:
            problems.append("flip_rate must lie in [0, 1]")
        if not 1 <= self.max_events <= C:
            problems.append("max_events must lie in [1, n_classes]")
        if not 1 <= self.min_event_len <= self.max_event_len:
            problems.append("need 1 <= min_event_len <= max_event_len")
        probs = np.asarray(self.pattern_probs, dtype=float)
        if probs.shape != (3,) or (probs < 0).any() or not np.isclose(probs.sum(), 1.0):
            problems.append("pattern_probs must be 3 non-negative numbers summing to 1")
        if not 0 <= self.sync_prob <= 1:
            problems.append("sync_prob must lie in [0, 1]")
        if problems:
            raise ManifestError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(**d).validate()

    def hash(self) -> str:
        return hashlib.sha256(container.canonical_json(self.to_dict())).hexdigest()


@dataclass
class VideoSample:
    audio: np.ndarray  # (T, d)
    visual: np.ndarray
    gt_audio: np.ndarray  # (T, C) in {0, 1}
    gt_visual: np.ndarray
    weak: np.ndarray  # (C,)
    pseudo_audio: np.ndarray  # (T, C)
    pseudo_visual: np.ndarray

    @property
    def gt_av(self) -> np.ndarray:
        return self.gt_audio * self.gt_visual


@dataclass
class Dataset:
    """Stacked arrays for one split; the batched view of a list of VideoSample."""

    audio: np.ndarray  # (N, T, d)
    visual: np.ndarray
    gt_audio: np.ndarray  # (N, T, C)
    gt_visual: np.ndarray
    weak: np.ndarray  # (N, C)
    pseudo_audio: np.ndarray
    pseudo_visual: np.ndarray

    ARRAYS = ("audio", "visual", "gt_audio", "gt_visual", "weak", "pseudo_audio", "pseudo_visual")

    def __len__(self) -> int:
        return self.audio.shape[0]

    @classmethod
    def from_samples(cls, samples: Sequence[VideoSample]) -> "Dataset":
        return cls(*(np.stack([getattr(s, name) for s in samples]) for name in cls.ARRAYS))

    def samples(self) -> list[VideoSample]:
        return [VideoSample(*(getattr(self, name)[i] for name in self.ARRAYS)) for i in range(len(self))]

    def subset(self, idx) -> "Dataset":
        return Dataset(*(getattr(self, name)[idx] for name in self.ARRAYS))


def prototypes(manifest: DatasetManifest) -> dict[str, np.ndarray]:
    """Orthonormal class prototypes scaled to norm sqrt(d), one (C, d) table per modality."""
    rng = np.random.default_rng([manifest.seed, 101])
    out = {}
    for modality in ("audio", "visual"):
        q, _ = np.linalg.qr(rng.standard_normal((manifest.d, manifest.n_classes)))
        out[modality] = q.T * np.sqrt(manifest.d)
    return out


def sample_events(manifest: DatasetManifest, rng: np.random.Generator) -> list[EventInstance]:
    T, C = manifest.T, manifest.n_classes
    n = int(rng.integers(1, manifest.max_events + 1))
    classes = rng.choice(C, size=n, replace=False)
    events = []

    def interval():
        length = int(rng.integers(manifest.min_event_len, manifest.max_event_len + 1))
        length = min(length, T)
        start = int(rng.integers(0, T - length + 1))
        return start, start + length - 1

    for c in classes:
        pattern = PATTERNS[rng.choice(3, p=manifest.pattern_probs)]
        span = interval()
        if pattern in ("audio", "both"):
            events.append(EventInstance(int(c), "a", *span))
        if pattern in ("visual", "both"):
            if pattern == "both" and rng.random() >= manifest.sync_prob:
                span = interval()
            events.append(EventInstance(int(c), "v", *span))
    return events


def synthesize_video(events: Sequence[EventInstance], manifest: DatasetManifest,
                     protos: dict[str, np.ndarray], rng: np.random.Generator) -> VideoSample:
    T, C, d = manifest.T, manifest.n_classes, manifest.d
    gt = {"a": np.zeros((T, C), dtype=np.int32), "v": np.zeros((T, C), dtype=np.int32)}
    for ev in events:
        gt[ev.modality][ev.start:ev.end + 1, ev.cls] = 1
    feats = {}
    for key, modality in (("a", "audio"), ("v", "visual")):
        noise = rng.standard_normal((T, d)) * manifest.feature_sigma
        feats[key] = gt[key] @ protos[modality] + noise
    pseudo = {}
    for key in ("a", "v"):
        flips = rng.random((T, C)) < manifest.flip_rate
        pseudo[key] = np.where(flips, 1 - gt[key], gt[key]).astype(np.int32)
    weak = (gt["a"].any(axis=0) | gt["v"].any(axis=0)).astype(np.int32)
    return VideoSample(feats["a"], feats["v"], gt["a"], gt["v"], weak, pseudo["a"], pseudo["v"])


def generate_dataset(manifest: DatasetManifest, split: str = "train") -> list[VideoSample]:
    """Deterministic videos for one split; the split name selects an independent stream."""
    manifest.validate()
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    protos = prototypes(manifest)
    rng = np.random.default_rng([manifest.seed, SPLITS.index(split)])
    count = manifest.n_videos if split == "train" else manifest.n_test
    return [synthesize_video(sample_events(manifest, rng), manifest, protos, rng) for _ in range(count)]


def generate_splits(manifest: DatasetManifest) -> dict[str, Dataset]:
    splits = {"train": Dataset.from_samples(generate_dataset(manifest, "train"))}
    if manifest.n_test:
        splits["test"] = Dataset.from_samples(generate_dataset(manifest, "test"))
    return splits


# ---------------------------------------------------------------- files


MANIFEST_FILE = "manifest.json"
DATA_FILE = "data.bin"


def save_dataset(directory: str | Path, manifest: DatasetManifest, splits: dict[str, Dataset]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    tensors = {f"{split}/{name}": getattr(ds, name) for split, ds in splits.items() for name in Dataset.ARRAYS}
    container.save(directory / DATA_FILE, tensors, {"manifest_hash": manifest.hash()})


def load_dataset(directory: str | Path) -> tuple[DatasetManifest, dict[str, Dataset]]:
    directory = Path(directory)
    manifest = DatasetManifest.from_dict(json.loads((directory / MANIFEST_FILE).read_text()))
    tensors, meta = container.load(directory / DATA_FILE)
    if meta.get("manifest_hash") != manifest.hash():
        raise container.ContainerError("dataset blob does not belong to this manifest")
    splits = {}
    for split in SPLITS:
        if f"{split}/audio" in tensors:
            splits[split] = Dataset(*(tensors[f"{split}/{name}"] for name in Dataset.ARRAYS))
    return manifest, splits
