import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowrom.numerics import ShapeError
from flowrom.series import (
    NORM_EPS,
    Window,
    embed_patches,
    instance_denorm,
    instance_norm,
    make_patches,
    patch_count,
)

window_values = arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e4, 1e4))


def test_instance_norm_examples():
    w, stats = instance_norm(Window([1.0, 2.0, 3.0]))
    a = 1.0 / np.std([1.0, 2.0, 3.0])
    np.testing.assert_allclose(w.values, [-a, 0, a], rtol=1e-14)
    np.testing.assert_allclose(instance_denorm(w.values, stats), [1, 2, 3], rtol=1e-14)
    w, stats = instance_norm(Window([5.0, 5.0, 5.0]))
    np.testing.assert_array_equal(w.values, [0, 0, 0])
    assert (stats.mean, stats.std, stats.eps) == (5.0, 0.0, NORM_EPS)
    np.testing.assert_array_equal(instance_denorm(np.zeros(3), stats), [5, 5, 5])
    with pytest.raises(ValueError):
        instance_norm(Window([1.0]), eps=0.0)


def test_round_trip_on_many_random_windows():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x = rng.normal(size=rng.integers(1, 20)) * rng.uniform(1e-3, 1e3) + rng.normal() * 10
        w, stats = instance_norm(Window(x))
        np.testing.assert_allclose(instance_denorm(w.values, stats), x, rtol=1e-12, atol=1e-12 * np.abs(x).max())


@given(window_values)
def test_norm_moments_and_idempotence(x):
    w, stats = instance_norm(Window(x))
    # rounding in x - mean is relative to |x|, amplified by 1 / scale
    assert abs(w.values.mean()) < 1e-12 * max(1.0, np.abs(x).max() / stats.scale)
    if stats.std > NORM_EPS * 10 and stats.std > 1e-9 * np.abs(x).max():
        assert abs(w.values.var() - 1.0) < 1e-10
        again, _ = instance_norm(w)
        np.testing.assert_allclose(again.values, w.values, atol=1e-10)


def test_window_invariants():
    with pytest.raises(ShapeError):
        Window(np.ones((2, 2)))
    with pytest.raises(ValueError):
        Window([1.0, np.nan])


@given(st.integers(1, 60), st.integers(1, 60), st.integers(1, 30))
def test_patch_count_formula(T, L, S):
    if L > T:
        with pytest.raises(ValueError):
            patch_count(T, L, S)
    else:
        D = patch_count(T, L, S)
        assert D == (T - L) // S + 1
        assert (D - 1) * S + L <= T < D * S + L


def test_patch_examples():
    assert patch_count(30, 16, 8) == 2
    w = Window(np.arange(10.0))
    single = make_patches(Window(np.arange(4.0)), 4, 3)
    np.testing.assert_array_equal(single.patches, [np.arange(4.0)])
    p = make_patches(w, 4, 2)
    assert p.count == 4
    for d in range(4):
        np.testing.assert_array_equal(p.patches[d], w.values[2 * d:2 * d + 4])
    with pytest.raises(ValueError):
        make_patches(w, 11, 1)
    with pytest.raises(ValueError):
        make_patches(w, 4, 0)


def test_embed_patches():
    p = make_patches(Window(np.arange(10.0)), 4, 2)
    np.testing.assert_array_equal(embed_patches(p, np.zeros((4, 6)), np.zeros(6)), np.zeros((4, 6)))
    np.testing.assert_array_equal(embed_patches(p, np.eye(4), np.zeros(4)), p.patches)
    rng = np.random.default_rng(1)
    w, b = rng.normal(size=(4, 5)), rng.normal(size=5)
    expected = np.array([[sum(row[t] * w[t, j] for t in range(4)) + b[j] for j in range(5)] for row in p.patches])
    np.testing.assert_allclose(embed_patches(p, w, b), expected, atol=1e-12)
    with pytest.raises(ShapeError):
        embed_patches(p, np.zeros((3, 5)), np.zeros(5))


def test_channel_permutation_commutes():
    rng = np.random.default_rng(2)
    block = rng.normal(size=(5, 10))
    perm = rng.permutation(5)
    norm = [instance_norm(Window(row))[0].values for row in block]
    norm_perm = [instance_norm(Window(row))[0].values for row in block[perm]]
    np.testing.assert_array_equal(np.array(norm)[perm], np.array(norm_perm))
