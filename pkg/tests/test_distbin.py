import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from secdepth.distbin import BinSpec, is_distribution, js_divergence, soft_bin, soft_bin_naive
from secdepth.numcore import gradcheck


def test_default_spec():
    spec = BinSpec()
    assert spec.n_bins == 32
    assert spec.sigma == 1 / 64
    c = spec.centers
    assert (np.diff(c) > 0).all() and c[0] > 0 and c[-1] < 1
    assert spec.sigma == pytest.approx(0.5 * (c[1] - c[0]))


def test_single_pixel_four_bins():
    p = soft_bin(np.array([[0.125]]), BinSpec(4)).data
    w = np.exp(-np.array([0.0, 2.0, 8.0, 18.0]))
    np.testing.assert_allclose(p, w / w.sum(), rtol=1e-12)
    np.testing.assert_allclose(p, [0.880, 0.119, 0.000, 0.000], atol=1e-3)


@pytest.mark.parametrize("n", [3, 10, 17])
def test_constant_map_at_center_is_symmetric(n):
    spec = BinSpec(32)
    p = soft_bin(np.full((4, 4), spec.centers[n]), spec).data
    for k in range(1, min(n, 31 - n) + 1):
        assert p[n - k] == pytest.approx(p[n + k], rel=1e-12, abs=1e-300)


def test_normalizer_cancels(rng):
    # the Gaussian constant is kept but must not change the distribution
    d = rng.uniform(0, 1, (5, 5))
    spec = BinSpec(8)
    raw = np.exp(-((d.reshape(-1, 1) - spec.centers) ** 2) / (2 * spec.sigma**2)).sum(0)
    np.testing.assert_allclose(soft_bin(d, spec).data, raw / raw.sum(), rtol=1e-12)


def test_matches_naive_loop(rng):
    d = rng.uniform(0, 1, (7, 9))
    assert np.abs(soft_bin(d).data - soft_bin_naive(d)).max() < 1e-10


def test_batched_rows_are_independent(rng):
    d = rng.uniform(0, 1, (3, 6, 6))
    batched = soft_bin(d).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], soft_bin(d[i]).data, rtol=1e-13)


maps = arrays(np.float64, (6, 6), elements=st.floats(0, 1))


@given(maps)
@settings(max_examples=100, deadline=None)
def test_soft_bin_is_distribution(d):
    assert is_distribution(soft_bin(d).data, atol=1e-9)


@given(maps, st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_soft_bin_permutation_invariant(d, seed):
    shuffled = np.random.default_rng(seed).permutation(d.reshape(-1)).reshape(d.shape)
    assert np.abs(soft_bin(d).data - soft_bin(shuffled).data).max() < 1e-12


def test_js_self_zero(rng):
    p = soft_bin(rng.uniform(0, 1, (4, 4))).data
    assert float(js_divergence(p, p).data) == pytest.approx(0.0, abs=1e-15)


def test_js_hand_value():
    expected = 0.5 * math.log(4 / 3) + 0.5 * (0.5 * math.log(2 / 3) + 0.5 * math.log(2))
    got = float(js_divergence([1.0, 0.0], [0.5, 0.5]).data)
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.215762, abs=1e-6)


def test_js_disjoint_support_is_ln2():
    assert float(js_divergence([1.0, 0.0], [0.0, 1.0]).data) == pytest.approx(math.log(2), abs=1e-15)


def test_js_length_mismatch():
    with pytest.raises(ValueError):
        js_divergence([0.5, 0.5], [1.0, 0.0, 0.0])


dists = arrays(np.float64, 8, elements=st.floats(0, 1)).filter(lambda v: v.sum() > 1e-3).map(lambda v: v / v.sum())


@given(dists, dists)
@settings(max_examples=200, deadline=None)
def test_js_symmetric_and_bounded(p, q):
    a = float(js_divergence(p, q).data)
    b = float(js_divergence(q, p).data)
    assert abs(a - b) < 1e-12
    assert 0.0 <= a <= math.log(2) + 1e-15
    if np.allclose(p, q, atol=1e-12):
        assert a < 1e-9


def test_js_of_soft_bin_gradcheck(rng):
    ref = soft_bin(rng.uniform(0, 1, (8, 8))).data
    d = rng.uniform(0.05, 0.95, (8, 8))
    assert gradcheck(lambda x: js_divergence(soft_bin(x), ref), d) < 1e-4


def test_js_gradient_wrt_second_argument(rng):
    p = soft_bin(rng.uniform(0, 1, (8, 8))).data
    d = rng.uniform(0.05, 0.95, (8, 8))
    assert gradcheck(lambda x: js_divergence(p, soft_bin(x)), d) < 1e-4
