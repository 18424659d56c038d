"""Per-channel window handling: reversible normalization, patching, embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError

__all__ = [
    "NORM_EPS",
    "Window",
    "NormStats",
    "PatchBatch",
    "instance_norm",
    "instance_denorm",
    "patch_count",
    "make_patches",
    "embed_patches",
]

NORM_EPS = 1e-5


@dataclass(frozen=True)
class Window:
    values: np.ndarray
    channel: int = 0
    origin_step: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ShapeError(f"window must be a non-empty vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"window for channel {self.channel} at step {self.origin_step} is not finite")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float
    eps: float = NORM_EPS

    @property
    def scale(self) -> float:
        # windows flatter than eps are divided by eps rather than their std
        return max(self.std, self.eps)


@dataclass(frozen=True)
class PatchBatch:
    patches: np.ndarray
    patch_len: int
    stride: int

    @property
    def count(self) -> int:
        return self.patches.shape[0]


def instance_norm(w: Window, eps: float = NORM_EPS) -> tuple[Window, NormStats]:
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    # shifting by the first value makes the mean of a constant window exact
    x0 = w.values[0]
    mean = float(x0 + np.mean(w.values - x0))
    std = float(np.sqrt(np.mean((w.values - mean) ** 2)))
    stats = NormStats(mean, std, eps)
    return Window((w.values - mean) / stats.scale, w.channel, w.origin_step), stats


def instance_denorm(values, stats: NormStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.scale + stats.mean


def patch_count(T: int, L: int, S: int) -> int:
    if not 1 <= L <= T:
        raise ValueError(f"patch length {L} must lie in [1, {T}] for a window of length {T}")
    if S < 1:
        raise ValueError(f"stride must be at least 1, got {S}")
    return (T - L) // S + 1


def make_patches(w: Window, L: int, S: int) -> PatchBatch:
    D = patch_count(len(w), L, S)
    starts = np.arange(D) * S
    patches = w.values[starts[:, None] + np.arange(L)[None, :]]
    return PatchBatch(patches, L, S)


def embed_patches(patches, w_embed, bias):
    """Linear embedding ``patches @ w_embed + bias`` (D x L -> D x d_m).

    Accepts arrays or recorded tensors for the weights.
    """
    x = patches.patches if isinstance(patches, PatchBatch) else patches
    if x.shape[-1] != w_embed.shape[0] or bias.shape != w_embed.shape[1:]:
        raise ShapeError(
            f"embedding shapes disagree: patches {x.shape}, weights {w_embed.shape}, bias {bias.shape}"
        )
    return x @ w_embed + bias
