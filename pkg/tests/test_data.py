import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avparse import container
from avparse.data import (Dataset, DatasetManifest, ManifestError, generate_dataset, generate_splits,
                          load_dataset, prototypes, save_dataset, synthesize_video)
from avparse.metrics import EventInstance


def small(**kw):
    base = dict(n_videos=30, n_test=10, seed=3)
    base.update(kw)
    return DatasetManifest(**base)


class TestManifest:
    def test_defaults_follow_desk_scale(self):
        m = DatasetManifest()
        assert (m.T, m.n_classes, m.d) == (10, 8, 64)
        m.validate()

    def test_unknown_keys_rejected(self):
        with pytest.raises(ManifestError):
            DatasetManifest.from_dict({"T": 10, "colour": "red"})

    @pytest.mark.parametrize("kw", [dict(T=0), dict(flip_rate=1.5), dict(feature_sigma=-1),
                                    dict(class_names=["a", "a"]), dict(pattern_probs=[0.5, 0.5, 0.5]),
                                    dict(min_event_len=5, max_event_len=2), dict(d=4)])
    def test_invalid(self, kw):
        with pytest.raises(ManifestError):
            DatasetManifest(**kw).validate()

    def test_hash_is_stable_and_sensitive(self):
        assert small().hash() == small().hash()
        assert small().hash() != small(seed=4).hash()
        assert DatasetManifest.from_dict(small().to_dict()).hash() == small().hash()


def test_noiseless_single_event():
    m = small(feature_sigma=0.0, flip_rate=0.0)
    protos = prototypes(m)
    v = synthesize_video([EventInstance(2, "a", 3, 5)], m, protos, np.random.default_rng(0))
    np.testing.assert_array_equal(v.audio[3:6], np.broadcast_to(protos["audio"][2], (3, m.d)))
    np.testing.assert_array_equal(v.audio[:3], 0)
    np.testing.assert_array_equal(v.visual, 0)
    np.testing.assert_array_equal(v.weak, np.eye(m.n_classes, dtype=int)[2])
    np.testing.assert_array_equal(v.pseudo_audio, v.gt_audio)


def test_prototypes_are_orthogonal():
    m = small()
    for table in prototypes(m).values():
        np.testing.assert_allclose(table @ table.T, m.d * np.eye(m.n_classes), atol=1e-9)


def test_same_seed_same_data():
    a, b = generate_splits(small()), generate_splits(small())
    for split in a:
        for name in Dataset.ARRAYS:
            np.testing.assert_array_equal(getattr(a[split], name), getattr(b[split], name))


def test_splits_differ():
    s = generate_splits(small(n_test=30))
    assert not np.array_equal(s["train"].audio, s["test"].audio)


def test_weak_label_is_or_of_ground_truth():
    samples = generate_dataset(small(n_videos=1000, seed=9))
    for s in samples:
        expected = [int(any(s.gt_audio[t, c] or s.gt_visual[t, c] for t in range(s.gt_audio.shape[0])))
                    for c in range(s.gt_audio.shape[1])]
        assert s.weak.tolist() == expected


def test_events_respect_manifest():
    m = small(n_videos=200, min_event_len=2, max_event_len=4, max_events=2)
    for s in generate_dataset(m):
        assert 1 <= s.weak.sum() <= 2
        for gt in (s.gt_audio, s.gt_visual):
            for c in range(m.n_classes):
                length = int(gt[:, c].sum())
                assert length == 0 or 2 <= length <= 4
                if length:
                    idx = np.flatnonzero(gt[:, c])
                    assert idx[-1] - idx[0] + 1 == length  # one contiguous interval


def test_flip_rate_is_respected():
    m = small(n_videos=400, flip_rate=0.2)
    ds = Dataset.from_samples(generate_dataset(m))
    rate = (ds.pseudo_audio != ds.gt_audio).mean()
    n = ds.gt_audio.size
    assert abs(rate - 0.2) < 4 * np.sqrt(0.2 * 0.8 / n)


def test_gt_av_is_derived():
    s = generate_dataset(small())[0]
    np.testing.assert_array_equal(s.gt_av, s.gt_audio & s.gt_visual)


def test_save_load_round_trip(tmp_path):
    m = small()
    splits = generate_splits(m)
    save_dataset(tmp_path, m, splits)
    m2, loaded = load_dataset(tmp_path)
    assert m2 == m
    for split in splits:
        for name in Dataset.ARRAYS:
            np.testing.assert_array_equal(getattr(loaded[split], name),
                                          getattr(splits[split], name).astype(getattr(loaded[split], name).dtype))


def test_load_rejects_foreign_blob(tmp_path):
    m = small()
    save_dataset(tmp_path, m, generate_splits(m))
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["seed"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(container.ContainerError):
        load_dataset(tmp_path)


class TestContainer:
    def test_round_trip_is_byte_identical(self):
        rng = np.random.default_rng(0)
        blob = container.dumps({"x": rng.standard_normal((3, 2)).astype(np.float32),
                                "y": np.arange(5, dtype=np.int32), "s": np.float32(2.5)}, {"k": [1, "a"]})
        tensors, meta = container.loads(blob)
        assert meta == {"k": [1, "a"]}
        assert container.dumps(tensors, meta) == blob
        assert tensors["s"].shape == ()

    def test_little_endian_payload(self):
        blob = container.dumps({"x": np.array([1.0], dtype=np.float32)})
        assert blob[-4:] == np.array([1.0], dtype="<f4").tobytes()
        assert blob[:4] == b"AVPT"

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 200))
    def test_truncation_is_an_error(self, cut):
        blob = container.dumps({"x": np.arange(12, dtype=np.float32).reshape(3, 4)}, {"a": 1})
        cut = min(cut, len(blob) - 1)
        with pytest.raises(container.ContainerError):
            container.loads(blob[:cut])

    def test_trailing_bytes_and_bad_magic(self):
        blob = container.dumps({"x": np.zeros(2, dtype=np.float32)})
        with pytest.raises(container.ContainerError):
            container.loads(blob + b"\0")
        with pytest.raises(container.ContainerError):
            container.loads(b"XXXX" + blob[4:])

    def test_unsupported_dtype(self):
        with pytest.raises(container.ContainerError):
            container.dumps({"x": np.array(["a"])})
