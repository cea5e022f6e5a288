"""Segment- and event-level F1 for audio, visual and audio-visual event parsing.

Conventions fixed here (the original toolkit is not reproduced bit for bit):

* F1 is computed per video and averaged over videos.
* A video with no ground truth and no predictions scores 1.
* Event matching pairs same-class (and same-modality) events whose segment
  IoU is at least 0.5, one-to-one, greedily by descending IoU.
* Event@AV pools a video's audio and visual decisions: cell counts from both
  matrices at segment level, modality-tagged event lists at event level.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

FIELDS = ("A", "V", "AV", "Type@AV", "Event@AV")
IOU_THRESHOLD = 0.5


@dataclass(frozen=True, order=True)
class EventInstance:
    cls: int
    modality: str  # "a", "v" or "av"
    start: int
    end: int  # inclusive

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def iou(a: EventInstance, b: EventInstance) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    return inter / (a.length + b.length - inter)


def extract_events(binary: np.ndarray, modality: str) -> list[EventInstance]:
    """Maximal runs of consecutive positive segments, per class, from a (T, C) matrix."""
    binary = np.asarray(binary).astype(bool)
    if binary.ndim != 2:
        raise ValueError(f"expected a (T, C) matrix, got shape {binary.shape}")
    events = []
    for c in range(binary.shape[1]):
        col = np.concatenate([[False], binary[:, c], [False]]).astype(np.int8)
        edges = np.diff(col)
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1) - 1
        events.extend(EventInstance(c, modality, int(s), int(e)) for s, e in zip(starts, ends))
    return events


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    return float(_f1_exact(tp, fp, fn))


def _f1_exact(tp: int, fp: int, fn: int) -> Fraction:
    denom = 2 * tp + fp + fn
    return Fraction(1) if denom == 0 else Fraction(2 * tp, denom)


def segment_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    return int((pred & gt).sum()), int((pred & ~gt).sum()), int((~pred & gt).sum())


def segment_f1(pred: np.ndarray, gt: np.ndarray) -> float:
    return f1_from_counts(*segment_counts(pred, gt))


def match_events(pred: Sequence[EventInstance], gt: Sequence[EventInstance],
                 threshold: float = IOU_THRESHOLD) -> list[tuple[int, int]]:
    """One-to-one (gt index, pred index) matches, greedy by descending IoU."""
    candidates = []
    for gi, g in enumerate(gt):
        for pi, p in enumerate(pred):
            if g.cls == p.cls and g.modality == p.modality:
                v = iou(g, p)
                if v >= threshold:
                    candidates.append((-v, g.start, p.start, gi, pi))
    candidates.sort()
    used_g, used_p, matches = set(), set(), []
    for _, _, _, gi, pi in candidates:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        matches.append((gi, pi))
    return matches


def event_counts(pred: Sequence[EventInstance], gt: Sequence[EventInstance]) -> tuple[int, int, int]:
    tp = len(match_events(pred, gt))
    return tp, len(pred) - tp, len(gt) - tp


def event_f1(pred: Sequence[EventInstance], gt: Sequence[EventInstance]) -> float:
    return f1_from_counts(*event_counts(pred, gt))


@dataclass
class EvalReport:
    segment: dict[str, float] = field(default_factory=dict)
    event: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {"segment": {k: self.segment[k] for k in FIELDS},
                "event": {k: self.event[k] for k in FIELDS}}

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(dict(d["segment"]), dict(d["event"]))


def _with_type(a: Fraction, v: Fraction, av: Fraction, joint: Fraction) -> dict[str, float]:
    return {"A": float(a), "V": float(v), "AV": float(av), "Type@AV": float((a + v + av) / 3),
            "Event@AV": float(joint)}


def video_scores(pred_a: np.ndarray, pred_v: np.ndarray, gt_a: np.ndarray,
                 gt_v: np.ndarray) -> list[Fraction]:
    """Exact per-video F1s: [seg A, V, AV, Event@AV, event A, V, AV, Event@AV]."""
    pred_a, pred_v = pred_a.astype(bool), pred_v.astype(bool)
    gt_a, gt_v = gt_a.astype(bool), gt_v.astype(bool)
    pred_av, gt_av = pred_a & pred_v, gt_a & gt_v

    ca, cv = segment_counts(pred_a, gt_a), segment_counts(pred_v, gt_v)
    seg = [_f1_exact(*ca), _f1_exact(*cv), _f1_exact(*segment_counts(pred_av, gt_av)),
           _f1_exact(*(x + y for x, y in zip(ca, cv)))]

    ea = event_counts(extract_events(pred_a, "a"), extract_events(gt_a, "a"))
    ev = event_counts(extract_events(pred_v, "v"), extract_events(gt_v, "v"))
    eav = event_counts(extract_events(pred_av, "av"), extract_events(gt_av, "av"))
    # pooled lists with modality-tagged matching: matches never cross modalities
    joint = event_counts(extract_events(pred_a, "a") + extract_events(pred_v, "v"),
                         extract_events(gt_a, "a") + extract_events(gt_v, "v"))
    evt = [_f1_exact(*ea), _f1_exact(*ev), _f1_exact(*eav), _f1_exact(*joint)]
    return seg + evt


def _scores_chunk(args) -> list[list[Fraction]]:
    return [video_scores(*video) for video in zip(*args)]


def evaluate(pred_audio, pred_visual, gt_audio, gt_visual, threshold: float = 0.5,
             jobs: int = 1) -> EvalReport:
    """Full report from (N, T, C) predictions (probabilities or 0/1) and ground truth."""
    arrays = [np.asarray(x) for x in (pred_audio, pred_visual, gt_audio, gt_visual)]
    n = arrays[0].shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise ValueError("prediction and ground-truth video counts differ")
    if arrays[0].shape != arrays[2].shape or arrays[1].shape != arrays[3].shape:
        raise ValueError("prediction and ground-truth shapes differ")
    if n == 0:
        raise ValueError("nothing to evaluate")
    pa, pv = arrays[0] >= threshold, arrays[1] >= threshold
    ga, gv = arrays[2] >= 0.5, arrays[3] >= 0.5
    if jobs > 1 and n > 1:
        bounds = np.linspace(0, n, min(jobs, n) + 1).astype(int)
        chunks = [(pa[s:e], pv[s:e], ga[s:e], gv[s:e]) for s, e in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = [row for chunk in pool.map(_scores_chunk, chunks) for row in chunk]
    else:
        scores = _scores_chunk((pa, pv, ga, gv))
    # exact rational means: independent of video order and chunking
    mean = [sum(col, Fraction(0)) / n for col in zip(*scores)]
    return EvalReport(_with_type(*mean[:4]), _with_type(*mean[4:]))


def average_reports(reports: Iterable[EvalReport]) -> EvalReport:
    reports = list(reports)
    return EvalReport({k: float(np.mean([r.segment[k] for r in reports])) for k in FIELDS},
                      {k: float(np.mean([r.event[k] for r in reports])) for k in FIELDS})
