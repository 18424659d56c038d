import numpy as np
import pytest

from flowrom import autodiff as ad
from flowrom.numerics import ShapeError

from oracles import central_difference


def _fd_check(build, arrays, rtol=1e-5, atol=1e-7):
    """Compare backward() against central differences for every input array."""
    leaves = {k: ad.Tensor(v, name=k) for k, v in arrays.items()}
    grads = ad.backward(build(leaves))
    for name, x in arrays.items():
        def f():
            return float(ad.value_of(build({k: ad.Tensor(v, name=k) for k, v in arrays.items()})))

        fd = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            fd[idx] = central_difference(f, x, idx)
        np.testing.assert_allclose(grads.get(name, np.zeros_like(x)), fd, rtol=rtol, atol=atol, err_msg=name)


rng = np.random.default_rng(0)


def test_arithmetic_and_broadcast():
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,))
    _fd_check(lambda t: ((t["a"] + t["b"]) * t["a"] - t["b"] * 2.0 + 1.0 - t["a"] / 3.0).sum(), {"a": a, "b": b})
    _fd_check(lambda t: (-(t["a"]) * 0.5 + (2.0 - t["b"])).sum(), {"a": a, "b": b})


def test_matmul_2d_batched_and_const():
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    _fd_check(lambda t: ad.mse(t["a"] @ t["b"], np.ones((2, 3, 5))), {"a": a, "b": b})
    c = rng.normal(size=(2, 5, 3))
    _fd_check(lambda t: ((t["a"] @ t["b"]) @ t["c"]).sum(), {"a": a, "b": b, "c": c})
    const = rng.normal(size=(3, 3))
    _fd_check(lambda t: (const @ t["a"][0]).sum(), {"a": a})


def test_shape_ops():
    a = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(4, 3, 2))
    _fd_check(lambda t: (t["a"].swapaxes(0, 2) * w).sum(), {"a": a})
    _fd_check(lambda t: (t["a"].transpose(2, 1, 0) * w).sum(), {"a": a})
    _fd_check(lambda t: (t["a"].reshape(4, 6) @ np.ones((6, 1))).sum(), {"a": a})
    _fd_check(lambda t: (t["a"][1, 1:, ::2] * 3.0).sum() + t["a"].T.sum(), {"a": a})
    idx = np.array([0, 2, 2])
    _fd_check(lambda t: (t["a"][:, idx] * t["a"][:, idx]).sum(), {"a": a})


def test_nonlinear_ops():
    x = rng.normal(size=(3, 5))
    g, b = rng.normal(size=5), rng.normal(size=5)
    w = rng.normal(size=(3, 5))
    _fd_check(lambda t: (ad.softmax(t["x"]) * w).sum(), {"x": x})
    _fd_check(lambda t: (ad.gelu(t["x"]) * w).sum(), {"x": x})
    _fd_check(lambda t: (ad.layer_norm(t["x"], t["g"], t["b"]) * w).sum(), {"x": x, "g": g, "b": b})


def test_concat_take_rows_mse():
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
    table = rng.normal(size=(6, 3))
    ids = np.array([[1, 1], [5, 0]])
    _fd_check(lambda t: ad.mse(ad.concat([t["a"], t["b"]], axis=0), np.zeros((6, 3))), {"a": a, "b": b})
    _fd_check(lambda t: (ad.concat([t["a"], t["a"] * 2.0], axis=-1) * 1.5).sum(), {"a": a})
    _fd_check(lambda t: (ad.take_rows(t["E"], ids) * np.arange(12.0).reshape(2, 2, 3)).sum(), {"E": table})


def test_eager_path_matches_recorded_values():
    x = rng.normal(size=(3, 4))
    g, b = np.ones(4), np.zeros(4)
    eager = ad.layer_norm(ad.softmax(x), g, b)
    recorded = ad.layer_norm(ad.softmax(ad.Tensor(x)), g, b)
    assert isinstance(eager, np.ndarray)
    np.testing.assert_array_equal(eager, recorded.value)
    assert isinstance(ad.mse(x, x), float)


def test_constants_and_unused_leaves_get_nothing():
    a = ad.Tensor(np.ones(3), name="a")
    unused = ad.Tensor(np.ones(3), name="unused")
    grads = ad.backward((a * 2.0).sum())
    assert set(grads) == {"a"} and unused.grad is None
    np.testing.assert_array_equal(grads["a"], [2, 2, 2])


def test_shared_leaf_accumulates():
    a = ad.Tensor(np.array([1.0, 2.0]), name="a")
    grads = ad.backward((a * a).sum() + a.sum())
    np.testing.assert_array_equal(grads["a"], [3.0, 5.0])


def test_unsupported_op_is_named():
    a = ad.Tensor(np.ones(2), name="a")
    bad = ad.Tensor(np.ones(2), "cumprod", (a,))
    with pytest.raises(ad.UnsupportedOpError, match="cumprod"):
        ad.backward(bad.sum())
    with pytest.raises(ad.UnsupportedOpError):
        a / ad.Tensor(np.ones(2))


def test_backward_needs_scalar_and_shapes_are_checked():
    with pytest.raises(ShapeError):
        ad.backward(ad.Tensor(np.ones(3), name="v"))
    with pytest.raises(ShapeError):
        ad.Tensor(np.ones((2, 3))) @ np.ones((2, 3))
    with pytest.raises(ShapeError):
        ad.mse(np.ones(2), np.ones(3))
