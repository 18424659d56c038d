"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 array and remembers the operation that
produced it. The helper functions in this module (``softmax``, ``gelu``,
``layer_norm``, ``concat``, ``take_rows``, ``mse``) accept plain arrays too,
in which case they evaluate eagerly through :mod:`flowrom.numerics` and
record nothing. Model code is therefore written once and runs either as a
pure forward pass or as a recorded graph that :func:`backward` can
differentiate.
"""

from __future__ import annotations

import numpy as np

from . import numerics

__all__ = [
    "Tensor",
    "UnsupportedOpError",
    "backward",
    "concat",
    "gelu",
    "layer_norm",
    "mse",
    "softmax",
    "take_rows",
    "value_of",
]


class UnsupportedOpError(TypeError):
    """The recorded graph contains an operation with no registered gradient."""


class Tensor:
    # keeps ndarray binary ops from broadcasting over a Tensor elementwise
    __array_ufunc__ = None

    def __init__(self, value, op: str = "leaf", parents: tuple = (), ctx=None, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.op = op
        self.parents = parents
        self.ctx = ctx
        self.name = name
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UnsupportedOpError("div by a recorded tensor")
        return _binary("mul", self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return _binary("mul", self, -1.0)

    def __matmul__(self, other):
        return _matmul(self, other)

    def __rmatmul__(self, other):
        return _matmul(other, self)

    def __getitem__(self, index):
        return Tensor(self.value[index], "getitem", (self,), index)

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def swapaxes(self, a: int, b: int):
        return Tensor(np.swapaxes(self.value, a, b), "swapaxes", (self,), (a, b))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], tuple):
            axes = axes[0]
        return Tensor(np.transpose(self.value, axes), "transpose", (self,), axes)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Tensor(self.value.reshape(shape), "reshape", (self,), self.value.shape)

    def sum(self):
        return Tensor(self.value.sum(), "sum", (self,))


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _as_node(x):
    return x if isinstance(x, Tensor) else Tensor(x, "const")


def _binary(op, a, b):
    av, bv = value_of(a), value_of(b)
    if op == "add":
        out = av + bv
    elif op == "sub":
        out = av - bv
    else:
        out = av * bv
    return Tensor(out, op, (_as_node(a), _as_node(b)))


def _matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise numerics.ShapeError(f"cannot multiply {av.shape} by {bv.shape}")
    return Tensor(av @ bv, "matmul", (_as_node(a), _as_node(b)))


def softmax(x):
    """Softmax over the last axis."""
    if not isinstance(x, Tensor):
        return numerics.softmax(x)
    y = numerics.softmax(x.value)
    return Tensor(y, "softmax", (x,), y)


def gelu(x):
    if not isinstance(x, Tensor):
        return numerics.gelu(x)
    return Tensor(numerics.gelu(x.value), "gelu", (x,))


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    if not any(isinstance(t, Tensor) for t in (x, gamma, beta)):
        return numerics.layer_norm(x, gamma, beta, eps)
    xv, gv, bv = value_of(x), value_of(gamma), value_of(beta)
    if gv.shape != xv.shape[-1:] or bv.shape != xv.shape[-1:]:
        raise numerics.ShapeError(
            f"layer_norm lengths differ: input {xv.shape}, gamma {gv.shape}, beta {bv.shape}"
        )
    mu = xv.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(((xv - mu) ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = (xv - mu) * inv
    return Tensor(gv * xhat + bv, "layer_norm", tuple(_as_node(t) for t in (x, gamma, beta)), (xhat, inv))


def concat(parts, axis: int = 0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=axis)
    values = [value_of(p) for p in parts]
    sizes = [v.shape[axis] for v in values]
    return Tensor(np.concatenate(values, axis=axis), "concat", tuple(_as_node(p) for p in parts), (axis, sizes))


def take_rows(table, ids):
    """Gather rows ``table[ids]``; the gradient scatters back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if not isinstance(table, Tensor):
        return np.asarray(table, dtype=np.float64)[ids]
    return Tensor(table.value[ids], "take_rows", (table,), ids)


def mse(pred, target):
    """Mean of squared differences."""
    pv, tv = value_of(pred), value_of(target)
    if pv.shape != tv.shape:
        raise numerics.ShapeError(f"mse operands differ: {pv.shape} vs {tv.shape}")
    diff = pv - tv
    out = np.mean(diff * diff)
    if not isinstance(pred, Tensor) and not isinstance(target, Tensor):
        return float(out)
    return Tensor(out, "mse", (_as_node(pred), _as_node(target)), diff)


# --- vector-Jacobian products -------------------------------------------------

def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _vjp_add(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _vjp_sub(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _vjp_mul(node, g):
    a, b = node.parents
    ga = None if a.op == "const" else _unbroadcast(g * b.value, a.shape)
    gb = None if b.op == "const" else _unbroadcast(g * a.value, b.shape)
    return ga, gb


def _vjp_matmul(node, g):
    a, b = node.parents
    ga = gb = None
    if a.op != "const":
        ga = _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape)
    if b.op != "const":
        if b.ndim == 2 and a.ndim > 2:
            # fold the batch axes into one GEMM instead of summing per-batch products
            av = a.value.reshape(-1, a.shape[-1])
            gb = av.T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape)
    return ga, gb


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def _vjp_getitem(node, g):
    (a,) = node.parents
    out = np.zeros_like(a.value)
    if _is_basic_index(node.ctx):
        out[node.ctx] = g
    else:
        np.add.at(out, node.ctx, g)
    return (out,)


def _vjp_swapaxes(node, g):
    return (np.swapaxes(g, *node.ctx),)


def _vjp_transpose(node, g):
    return (np.transpose(g, np.argsort(node.ctx)),)


def _vjp_reshape(node, g):
    return (g.reshape(node.ctx),)


def _vjp_sum(node, g):
    (a,) = node.parents
    return (np.broadcast_to(g, a.shape).copy(),)


def _vjp_softmax(node, g):
    y = node.ctx
    return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)


def _vjp_gelu(node, g):
    (a,) = node.parents
    return (g * numerics.gelu_grad(a.value),)


def _vjp_layer_norm(node, g):
    x, gamma, beta = node.parents
    xhat, inv = node.ctx
    n = xhat.shape[-1]
    dxhat = g * gamma.value
    dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True))
    lead = tuple(range(g.ndim - 1))
    return dx, np.sum(g * xhat, axis=lead), np.sum(g, axis=lead)


def _vjp_concat(node, g):
    axis, sizes = node.ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _vjp_take_rows(node, g):
    (table,) = node.parents
    out = np.zeros_like(table.value)
    np.add.at(out, node.ctx, g)
    return (out,)


def _vjp_mse(node, g):
    diff = node.ctx
    d = g * 2.0 * diff / diff.size
    return d, -d


_VJP = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "matmul": _vjp_matmul,
    "getitem": _vjp_getitem,
    "swapaxes": _vjp_swapaxes,
    "transpose": _vjp_transpose,
    "reshape": _vjp_reshape,
    "sum": _vjp_sum,
    "softmax": _vjp_softmax,
    "gelu": _vjp_gelu,
    "layer_norm": _vjp_layer_norm,
    "concat": _vjp_concat,
    "take_rows": _vjp_take_rows,
    "mse": _vjp_mse,
}


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every named leaf.

    Returns the gradients keyed by leaf name. Constants receive nothing.
    Raises :class:`UnsupportedOpError` naming the first operation without a
    registered vector-Jacobian product.
    """
    if loss.value.size != 1:
        raise numerics.ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    for node in order:
        if node.op not in ("leaf", "const") and node.op not in _VJP:
            raise UnsupportedOpError(f"no gradient registered for op '{node.op}'")
    grads = {id(loss): np.ones_like(loss.value)}
    named = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op == "leaf":
            node.grad = g if node.grad is None else node.grad + g
            if node.name is not None:
                named[node.name] = node.grad
            continue
        if node.op == "const":
            continue
        for parent, pg in zip(node.parents, _VJP[node.op](node, g)):
            if pg is None or parent.op == "const":
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return named
