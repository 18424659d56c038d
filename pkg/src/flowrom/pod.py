"""Proper orthogonal decomposition of snapshot data.

Snapshots are stored one time step per column. A :class:`PodBasis` keeps the
leading ``r`` left singular vectors together with the full singular value
spectrum so that truncation diagnostics stay available after the fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ShapeError, svd

__all__ = [
    "SnapshotMatrix",
    "PodBasis",
    "ReducedSeries",
    "assemble_snapshots",
    "fit_basis",
    "reduce",
    "reconstruct",
    "reduce_snapshots",
    "reconstruct_series",
    "projection_error",
    "energy_spectrum",
]


@dataclass(frozen=True)
class SnapshotMatrix:
    data: np.ndarray
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError(f"snapshot data must be 2-D (nodes x steps), got {data.shape}")
        n, n_s = data.shape
        if n < 1:
            raise ValueError("snapshot matrix needs at least one node")
        if n_s < 2:
            raise ValueError(f"snapshot matrix needs at least 2 steps, got {n_s}")
        if not np.all(np.isfinite(data)):
            raise ValueError("snapshot matrix contains non-finite entries")
        if self.grid is not None:
            nx, ny = self.grid
            if nx * ny != n:
                raise ValueError(f"grid {nx}x{ny} does not match {n} nodes")
            object.__setattr__(self, "grid", (int(nx), int(ny)))
        object.__setattr__(self, "data", data)

    @property
    def nodes(self) -> int:
        return self.data.shape[0]

    @property
    def steps(self) -> int:
        return self.data.shape[1]

    def columns(self, start: int, stop: int) -> "SnapshotMatrix":
        return SnapshotMatrix(self.data[:, start:stop], self.grid)


@dataclass(frozen=True)
class PodBasis:
    basis: np.ndarray
    singular_values: np.ndarray
    mean_field: np.ndarray
    centering: bool = True

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def nodes(self) -> int:
        return self.basis.shape[0]


@dataclass(frozen=True)
class ReducedSeries:
    coeffs: np.ndarray
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 2:
            raise ShapeError(f"reduced coefficients must be 2-D (channels x steps), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("reduced series contains non-finite entries")
        object.__setattr__(self, "coeffs", c)

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def steps(self) -> int:
        return self.coeffs.shape[1]


def assemble_snapshots(fields, grid=None) -> SnapshotMatrix:
    """Stack per-step field vectors as the columns of a snapshot matrix."""
    fields = [np.asarray(f, dtype=np.float64).ravel() for f in fields]
    if not fields:
        raise ValueError("no snapshots given")
    n = fields[0].size
    for j, f in enumerate(fields):
        if f.size != n:
            raise ShapeError(f"snapshot {j} has {f.size} values, expected {n}")
    return SnapshotMatrix(np.stack(fields, axis=1), grid)


def fit_basis(u: SnapshotMatrix, r: int, centering: bool = True) -> PodBasis:
    n, n_s = u.data.shape
    if not 1 <= r <= min(n, n_s):
        raise ValueError(f"rank r={r} outside [1, {min(n, n_s)}]")
    mean = u.data.mean(axis=1) if centering else np.zeros(n)
    left, sigma, _ = svd(u.data - mean[:, None])
    return PodBasis(left[:, :r].copy(), sigma, mean, centering)


def reduce(basis: PodBasis, field_values) -> np.ndarray:
    """Reduced coordinates ``V_r^T (u - mean)`` of one field."""
    f = np.asarray(field_values, dtype=np.float64)
    if f.shape != (basis.nodes,):
        raise ShapeError(f"field has shape {f.shape}, basis expects ({basis.nodes},)")
    return basis.basis.T @ (f - basis.mean_field)


def reconstruct(basis: PodBasis, coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape != (basis.rank,):
        raise ShapeError(f"coefficients have shape {c.shape}, basis rank is {basis.rank}")
    return basis.basis @ c + basis.mean_field


def reduce_snapshots(basis: PodBasis, u: SnapshotMatrix) -> ReducedSeries:
    if u.nodes != basis.nodes:
        raise ShapeError(f"snapshots have {u.nodes} nodes, basis expects {basis.nodes}")
    return ReducedSeries(basis.basis.T @ (u.data - basis.mean_field[:, None]))


def reconstruct_series(basis: PodBasis, series: ReducedSeries, grid=None) -> SnapshotMatrix:
    if series.channels != basis.rank:
        raise ShapeError(f"series has {series.channels} channels, basis rank is {basis.rank}")
    return SnapshotMatrix(basis.basis @ series.coeffs + basis.mean_field[:, None], grid)


def projection_error(basis: PodBasis, u: SnapshotMatrix) -> float:
    """Squared Frobenius norm of what the basis cannot represent in ``u``."""
    centered = u.data - basis.mean_field[:, None]
    resid = centered - basis.basis @ (basis.basis.T @ centered)
    return float(np.sum(resid * resid))


def energy_spectrum(basis: PodBasis) -> np.ndarray:
    """Cumulative fraction of squared singular values captured by the first k modes."""
    energy = np.asarray(basis.singular_values, dtype=np.float64) ** 2
    total = energy.sum()
    if total <= 0.0:
        raise ValueError("singular value spectrum is identically zero (degenerate snapshot data)")
    cum = np.minimum(np.cumsum(energy) / total, 1.0)
    cum[-1] = 1.0
    return cum
