import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avparse import autodiff as ad
from avparse.aggregation import HybridAttnParams, attention, hybrid_attend
from avparse.autodiff import Tensor


def params(d, seed=0):
    """Initialised weights with random value projections so every path carries signal."""
    rng = np.random.default_rng(seed)
    p = HybridAttnParams.init(d, rng)
    for stream in (p.audio, p.visual):
        for proj in (stream.self_attn, stream.cross_attn):
            proj.v.data = rng.uniform(-0.5, 0.5, proj.v.data.shape)
    return p


def test_fresh_init_is_identity():
    rng = np.random.default_rng(0)
    a, v = rng.standard_normal((2, 2, 5, 4))
    oa, ov = hybrid_attend(Tensor(a), Tensor(v), HybridAttnParams.init(4, rng))
    np.testing.assert_array_equal(oa.data, a)
    np.testing.assert_array_equal(ov.data, v)


def test_single_segment_adds_value_projections():
    rng = np.random.default_rng(1)
    p = params(3)
    a, v = rng.standard_normal((2, 1, 1, 3))
    oa, ov = hybrid_attend(Tensor(a), Tensor(v), p)
    np.testing.assert_allclose(oa.data, a + a @ p.audio.self_attn.v.data + v @ p.audio.cross_attn.v.data, rtol=1e-12)
    np.testing.assert_allclose(ov.data, v + v @ p.visual.self_attn.v.data + a @ p.visual.cross_attn.v.data, rtol=1e-12)


def test_matches_reference():
    rng = np.random.default_rng(2)
    d, T = 4, 6
    p = params(d, 3)
    a, v = rng.standard_normal((2, 1, T, d))

    def ref(x, ctx, proj):
        s = (x @ proj.q.data) @ (ctx @ proj.k.data).T / np.sqrt(d)
        w = np.exp(s - s.max(1, keepdims=True))
        w /= w.sum(1, keepdims=True)
        return w @ (ctx @ proj.v.data)

    expected = a[0] + ref(a[0], a[0], p.audio.self_attn) + ref(a[0], v[0], p.audio.cross_attn)
    np.testing.assert_allclose(hybrid_attend(Tensor(a), Tensor(v), p)[0].data[0], expected, rtol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 8), st.integers(1, 6), st.floats(0.1, 20))
def test_attention_rows_sum_to_one(b, T, d, scale):
    rng = np.random.default_rng(b + 10 * T + 100 * d)
    p = params(d, T)
    x, ctx = rng.standard_normal((2, b, T, d)) * scale
    _, w = attention(Tensor(x), Tensor(ctx), p.audio.cross_attn)
    assert w.shape == (b, T, T)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-6)


def test_swap_symmetry():
    rng = np.random.default_rng(4)
    p = params(4, 5)
    a, v = rng.standard_normal((2, 2, 5, 4))
    oa, ov = hybrid_attend(Tensor(a), Tensor(v), p)
    sv, sa = hybrid_attend(Tensor(v), Tensor(a), p.swapped())
    np.testing.assert_array_equal(oa.data, sa.data)
    np.testing.assert_array_equal(ov.data, sv.data)


def test_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        hybrid_attend(Tensor(np.zeros((1, 3, 4))), Tensor(np.zeros((1, 4, 4))), params(4))
