import itertools
import re
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from avparse.metrics import (FIELDS, EvalReport, EventInstance, evaluate, event_f1, extract_events, iou,
                             match_events, segment_f1)

# ---------------------------------------------------------------- brute-force reference


def runs(column) -> list[tuple[int, int]]:
    """Maximal runs of ones found by a regex over the 0/1 string."""
    s = "".join("1" if x else "0" for x in column)
    return [(m.start(), m.end() - 1) for m in re.finditer("1+", s)]


def ref_events(binary, tag):
    T, C = binary.shape
    return [(c, tag, s, e) for c in range(C) for s, e in runs(binary[:, c])]


def ref_iou(p, g):
    ps, gs = set(range(p[2], p[3] + 1)), set(range(g[2], g[3] + 1))
    return Fraction(len(ps & gs), len(ps | gs))


def ref_matches(pred, gt) -> int:
    """Largest one-to-one matching of same-class, same-tag pairs with IoU >= 1/2, by exhaustion."""
    edges = [(i, j) for i, p in enumerate(pred) for j, g in enumerate(gt)
             if p[0] == g[0] and p[1] == g[1] and ref_iou(p, g) >= Fraction(1, 2)]
    for k in range(len(edges), 0, -1):
        for combo in itertools.combinations(edges, k):
            if len({i for i, _ in combo}) == k and len({j for _, j in combo}) == k:
                return k
    return 0


def ref_f1(tp, n_pred, n_gt):
    if n_pred == 0 and n_gt == 0:
        return Fraction(1)
    return Fraction(2 * tp, n_pred + n_gt)


def ref_cells(pred, gt):
    tp = sum(1 for p, g in zip(pred.ravel(), gt.ravel()) if p and g)
    return tp, int(pred.sum()), int(gt.sum())


def ref_evaluate(pa, pv, ga, gv):
    fields = {level: {k: [] for k in ("A", "V", "AV", "Event@AV")} for level in ("segment", "event")}
    for n in range(len(pa)):
        a, v, x, y = (m[n].astype(int) for m in (pa, pv, ga, gv))
        pav, gav = a * v, x * y
        cells = {"A": ref_cells(a, x), "V": ref_cells(v, y), "AV": ref_cells(pav, gav)}
        cells["Event@AV"] = tuple(s + t for s, t in zip(cells["A"], cells["V"]))
        for k, c in cells.items():
            fields["segment"][k].append(ref_f1(*c))
        evs = {"A": (ref_events(a, "a"), ref_events(x, "a")), "V": (ref_events(v, "v"), ref_events(y, "v")),
               "AV": (ref_events(pav, "av"), ref_events(gav, "av"))}
        evs["Event@AV"] = (evs["A"][0] + evs["V"][0], evs["A"][1] + evs["V"][1])
        for k, (p, g) in evs.items():
            fields["event"][k].append(ref_f1(ref_matches(p, g), len(p), len(g)))
    out = {}
    for level, cols in fields.items():
        m = {k: sum(vals) / len(vals) for k, vals in cols.items()}
        out[level] = {"A": float(m["A"]), "V": float(m["V"]), "AV": float(m["AV"]),
                      "Type@AV": float((m["A"] + m["V"] + m["AV"]) / 3), "Event@AV": float(m["Event@AV"])}
    return out


def random_instance(rng, n_videos):
    T, C = int(rng.integers(1, 7)), int(rng.integers(1, 4))
    density = rng.uniform(0.1, 0.9)
    return [(rng.random((n_videos, T, C)) < density).astype(int) for _ in range(4)]


def test_matches_brute_force_on_200_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        pa, pv, ga, gv = random_instance(rng, int(rng.integers(1, 6)))
        assert evaluate(pa, pv, ga, gv).to_dict() == ref_evaluate(pa, pv, ga, gv)


def test_matches_brute_force_on_50_video_sets():
    rng = np.random.default_rng(1)
    for _ in range(10):
        data = random_instance(rng, 50)
        assert evaluate(*data).to_dict() == ref_evaluate(*data)


# ---------------------------------------------------------------- hand-checked cases


class TestExtract:
    def test_runs(self):
        out = extract_events(np.array([[1], [1], [0], [1]]), "a")
        assert out == [EventInstance(0, "a", 0, 1), EventInstance(0, "a", 3, 3)]

    def test_empty(self):
        assert extract_events(np.zeros((5, 3)), "v") == []

    def test_random_against_scan(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            m = rng.integers(0, 2, (8, 3))
            got = [(e.cls, e.modality, e.start, e.end) for e in extract_events(m, "a")]
            assert got == ref_events(m, "a")


class TestSegmentF1:
    def test_identical(self):
        m = np.array([[1, 0], [1, 1]])
        assert segment_f1(m, m) == 1.0

    def test_two_thirds(self):
        assert segment_f1(np.array([[1], [0], [0], [0]]), np.array([[1], [1], [0], [0]])) == pytest.approx(2 / 3)

    def test_all_false_positive(self):
        assert segment_f1(np.ones((4, 1)), np.zeros((4, 1))) == 0.0

    def test_both_empty(self):
        assert segment_f1(np.zeros((4, 2)), np.zeros((4, 2))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            segment_f1(np.zeros((4, 2)), np.zeros((4, 3)))

    @settings(max_examples=100, deadline=None)
    @given(hnp.arrays(np.int8, (5, 3), elements=st.integers(0, 1)),
           hnp.arrays(np.int8, (5, 3), elements=st.integers(0, 1)),
           st.integers(0, 4), st.integers(0, 2))
    def test_fixing_a_cell_never_hurts(self, pred, gt, t, c):
        fixed = pred.copy()
        fixed[t, c] = gt[t, c]
        assert segment_f1(fixed, gt) >= segment_f1(pred, gt)


class TestEventF1:
    def test_half_iou_matches(self):
        g, p = EventInstance(0, "a", 0, 3), EventInstance(0, "a", 0, 1)
        assert iou(g, p) == 0.5
        assert event_f1([p], [g]) == 1.0

    def test_quarter_iou_misses(self):
        g, p = EventInstance(0, "a", 0, 3), EventInstance(0, "a", 0, 0)
        assert iou(g, p) == 0.25
        assert event_f1([p], [g]) == 0.0

    def test_identical_sets(self):
        evs = [EventInstance(0, "a", 0, 2), EventInstance(1, "a", 4, 5)]
        assert event_f1(evs, list(evs)) == 1.0

    def test_class_and_modality_must_agree(self):
        assert event_f1([EventInstance(1, "a", 0, 3)], [EventInstance(0, "a", 0, 3)]) == 0.0
        assert event_f1([EventInstance(0, "v", 0, 3)], [EventInstance(0, "a", 0, 3)]) == 0.0

    def test_matching_is_one_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            p = extract_events(rng.integers(0, 2, (6, 2)), "a")
            g = extract_events(rng.integers(0, 2, (6, 2)), "a")
            m = match_events(p, g)
            assert len({gi for gi, _ in m}) == len(m) == len({pi for _, pi in m})

    def test_greedy_tie_break_prefers_earlier_gt(self):
        # not reachable from maximal runs, but the rule is fixed for arbitrary lists
        g = [EventInstance(0, "a", 2, 3), EventInstance(0, "a", 0, 1)]
        p = [EventInstance(0, "a", 1, 2)]
        assert match_events(p, g, threshold=1 / 3) == [(1, 0)]


class TestEvaluate:
    def test_perfect(self):
        rng = np.random.default_rng(4)
        ga, gv = rng.integers(0, 2, (2, 6, 5, 3))
        rep = evaluate(ga, gv, ga, gv)
        assert all(v == 1.0 for level in rep.to_dict().values() for v in level.values())

    def test_hand_example(self):
        ga = np.array([[[1], [1], [0], [0]]])
        pa = np.array([[[1], [0], [0], [0]]])
        empty = np.zeros((1, 4, 1))
        seg = evaluate(pa, empty, ga, empty).segment
        assert seg["A"] == pytest.approx(2 / 3)
        assert seg["V"] == 1.0 and seg["AV"] == 1.0
        assert seg["Type@AV"] == pytest.approx(8 / 9)

    def test_fields_in_table_order(self):
        rep = evaluate(*np.zeros((4, 1, 3, 2)))
        assert list(rep.to_dict()) == ["segment", "event"]
        assert tuple(rep.to_dict()["segment"]) == FIELDS

    def test_order_invariance_and_jobs(self):
        rng = np.random.default_rng(5)
        data = [rng.integers(0, 2, (23, 5, 3)) for _ in range(4)]
        perm = rng.permutation(23)
        base = evaluate(*data).to_dict()
        assert evaluate(*(d[perm] for d in data)).to_dict() == base
        assert evaluate(*data, jobs=3).to_dict() == base

    def test_threshold_applies_to_probabilities(self):
        g = np.array([[[1], [0]]])
        p = np.array([[[0.7], [0.3]]])
        assert evaluate(p, g, g, g).segment["A"] == 1.0
        assert evaluate(p, g, g, g, threshold=0.8).segment["A"] == 0.0

    def test_video_count_mismatch(self):
        with pytest.raises(ValueError):
            evaluate(np.zeros((2, 3, 1)), np.zeros((2, 3, 1)), np.zeros((3, 3, 1)), np.zeros((3, 3, 1)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_fields_in_unit_interval_and_type_identity(self, seed):
        data = random_instance(np.random.default_rng(seed), 4)
        rep = evaluate(*data)
        for level in (rep.segment, rep.event):
            assert all(0.0 <= v <= 1.0 for v in level.values())
            assert level["Type@AV"] == pytest.approx((level["A"] + level["V"] + level["AV"]) / 3, abs=1e-15)

    def test_round_trip_dict(self):
        rep = evaluate(*random_instance(np.random.default_rng(6), 3))
        assert EvalReport.from_dict(rep.to_dict()) == rep
