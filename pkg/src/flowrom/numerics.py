"""Dense double-precision kernels shared by the rest of the package.

Everything here is a pure function of its inputs. Matrices are plain
``numpy.ndarray`` objects of dtype float64; shape errors are raised as
:class:`ShapeError` with both offending shapes in the message.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = [
    "ShapeError",
    "SVDConvergenceError",
    "as_matrix",
    "matmul",
    "svd",
    "softmax",
    "gelu",
    "gelu_grad",
    "layer_norm",
]

SVD_TOL = 1e-14
SVD_MAX_SWEEPS = 100

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class SVDConvergenceError(RuntimeError):
    """Jacobi sweeps hit the iteration cap before orthogonalizing."""

    def __init__(self, sweeps: int, residual: float):
        self.sweeps = sweeps
        self.residual = residual
        super().__init__(
            f"one-sided Jacobi SVD did not converge within the cap of {sweeps} sweeps "
            f"(max relative off-diagonal residual {residual:.3e})"
        )


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds (n even) of n/2 disjoint column pairs."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_tall(a: np.ndarray, tol: float, max_sweeps: int):
    """One-sided (Hestenes) Jacobi on the columns of a tall matrix."""
    m, n = a.shape
    work = a.copy()
    n_pad = n + (n % 2)
    if n_pad != n:
        work = np.hstack([work, np.zeros((m, 1))])
    right = np.eye(n_pad)
    rounds = _round_robin(n_pad) if n_pad > 1 else []
    # columns below this squared norm are rounding noise: never rotated, reported as zero
    noise = (np.finfo(np.float64).eps * max(m, n)) ** 2 * float(np.einsum("ij,ij->", a, a))

    residual = 0.0
    for _ in range(max_sweeps):
        residual = 0.0
        for p, q in rounds:
            ap, aq = work[:, p], work[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            scale = np.sqrt(alpha * beta)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(scale > 0.0, np.abs(gamma) / scale, 0.0)
            active = (rel > tol) & (alpha > noise) & (beta > noise)
            if not active.any():
                continue
            residual = max(residual, float(rel.max()))
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            work[:, p], work[:, q] = c * ap - s * aq, s * ap + c * aq
            rp, rq = right[:, p], right[:, q]
            right[:, p], right[:, q] = c * rp - s * rq, s * rp + c * rq
        if residual == 0.0:
            break
    else:
        raise SVDConvergenceError(max_sweeps, residual)

    work, right = work[:, :n], right[:n, :n]
    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma, work, right = sigma[order], work[:, order], right[:, order]

    sigma = np.where(sigma * sigma > noise, sigma, 0.0)
    left = np.zeros((m, n))
    nonzero = sigma > 0.0
    left[:, nonzero] = work[:, nonzero] / sigma[nonzero]
    if not nonzero.all():
        left = _complete_orthonormal(left, nonzero)
    return left, sigma, right


def _complete_orthonormal(q: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Fill the columns of ``q`` not marked ``filled`` with an orthonormal complement."""
    q = q.copy()
    have = [q[:, j] for j in np.flatnonzero(filled)]
    missing = list(np.flatnonzero(~filled))
    for e in range(q.shape[0]):
        if not missing:
            break
        v = np.zeros(q.shape[0])
        v[e] = 1.0
        for _ in range(2):
            for h in have:
                v -= (h @ v) * h
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            v /= norm
            j = missing.pop(0)
            q[:, j] = v
            have.append(v)
    return q


def svd(a, tol: float = SVD_TOL, max_sweeps: int = SVD_MAX_SWEEPS):
    """Thin singular value decomposition by one-sided Jacobi rotations.

    Parameters
    ----------
    a : array_like, shape (m, n)
        Finite real matrix.
    tol : float
        Rotations stop once every column pair satisfies
        ``|a_p . a_q| <= tol * |a_p| |a_q|``.
    max_sweeps : int
        Cap on full sweeps over all column pairs.

    Returns
    -------
    left : ndarray, shape (m, p)
    sigma : ndarray, shape (p,)
        Non-negative, non-increasing.
    right : ndarray, shape (n, p)
        ``a == left @ diag(sigma) @ right.T``, with ``p = min(m, n)``.

    Raises
    ------
    SVDConvergenceError
        If the sweep cap is reached.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m == 0 or n == 0:
        raise ShapeError(f"cannot decompose an empty matrix of shape {a.shape}")
    if m >= n:
        return _jacobi_tall(a, tol, max_sweeps)
    w, sigma, v = _jacobi_tall(a.T, tol, max_sweeps)
    return v, sigma, w


def softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with Phi from the error function."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def layer_norm(v, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """Normalize over the last axis, then apply ``gamma * . + beta``."""
    v = np.asarray(v, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if gamma.shape != v.shape[-1:] or beta.shape != v.shape[-1:]:
        raise ShapeError(
            f"layer_norm lengths differ: input {v.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    mu = v.mean(axis=-1, keepdims=True)
    var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
    return gamma * (v - mu) / np.sqrt(var + eps) + beta
