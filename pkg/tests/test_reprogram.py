import numpy as np
import pytest

from flowrom import autodiff as ad
from flowrom.numerics import ShapeError
from flowrom.reprogram import (
    check_heads,
    cross_attention_head,
    derive_prototypes,
    linear_reprogram,
    multi_head_reprogram,
)

from oracles import attention_loops, matmul_loops

rng = np.random.default_rng(7)


def test_prototypes_are_probe_times_embedding():
    probe, E = rng.normal(size=(4, 12)), rng.normal(size=(12, 8))
    np.testing.assert_allclose(derive_prototypes(probe, E), matmul_loops(probe, E), atol=1e-13)
    with pytest.raises(ValueError, match="smaller"):
        derive_prototypes(rng.normal(size=(12, 12)), E)
    with pytest.raises(ShapeError):
        derive_prototypes(rng.normal(size=(4, 11)), E)


def test_single_head_matches_loop_oracle():
    patches, protos = rng.normal(size=(4, 8)), rng.normal(size=(5, 8))
    wq, wk, wv = (rng.normal(size=(8, 2)) for _ in range(3))
    out = cross_attention_head(patches, protos, wq, wk, wv)
    expected = attention_loops(patches @ wq, protos @ wk, protos @ wv)
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-14)


def test_multi_head_concatenates_then_merges():
    d, h = 8, 4
    patches, protos = rng.normal(size=(3, d)), rng.normal(size=(6, d))
    heads = [tuple(rng.normal(size=(d, d // h)) for _ in range(3)) for _ in range(h)]
    wo, bo = rng.normal(size=(d, d)), rng.normal(size=d)
    out = multi_head_reprogram(patches, protos, heads, wo, bo)
    cat = np.concatenate([attention_loops(patches @ q, protos @ k, protos @ v) for q, k, v in heads], axis=1)
    np.testing.assert_allclose(out, cat @ wo + bo, rtol=1e-11, atol=1e-13)
    assert out.shape == (3, d)


def test_output_rows_are_convex_combinations_of_values():
    patches, protos = rng.normal(size=(5, 4)), rng.normal(size=(3, 4))
    eye = np.eye(4)
    out = cross_attention_head(patches, protos, eye, eye, eye)
    # with W_V = I each output row lies in the convex hull of the prototypes
    lo, hi = protos.min(axis=0), protos.max(axis=0)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_heads_must_divide_width():
    assert check_heads(32, 4) == 8
    with pytest.raises(ValueError, match="3 heads"):
        check_heads(32, 3)
    patches, protos = rng.normal(size=(2, 6)), rng.normal(size=(3, 6))
    heads = [tuple(rng.normal(size=(6, 1)) for _ in range(3)) for _ in range(4)]
    with pytest.raises(ValueError):
        multi_head_reprogram(patches, protos, heads, np.eye(4, 6))


def test_shape_errors_name_the_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 5\)"):
        cross_attention_head(np.ones((2, 5)), np.ones((3, 4)), np.ones((4, 2)), np.ones((4, 2)), np.ones((4, 2)))
    with pytest.raises(ShapeError):
        linear_reprogram(np.ones((2, 5)), np.ones((4, 4)), np.zeros(4))


def test_linear_variant_and_tensor_inputs():
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 4)), rng.normal(size=4)
    np.testing.assert_allclose(linear_reprogram(x, w, b), x @ w + b)
    t = linear_reprogram(ad.Tensor(x, name="x"), ad.Tensor(w, name="w"), b)
    assert isinstance(t, ad.Tensor)
    np.testing.assert_array_equal(t.value, linear_reprogram(x, w, b))
