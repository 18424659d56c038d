"""Patch reprogramming onto text prototypes.

Patch embeddings act as queries; a small set of prototypes, each a learned
linear combination of the frozen word embeddings, supplies keys and values.
Several such cross-attention heads are concatenated and merged by one output
linear map. All functions accept arrays or recorded tensors.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .numerics import ShapeError

__all__ = [
    "derive_prototypes",
    "cross_attention_head",
    "multi_head_reprogram",
    "linear_reprogram",
    "check_heads",
]


def check_heads(d_model: int, heads: int) -> int:
    """Per-head width; the model width must split evenly across heads."""
    if heads < 1 or d_model % heads:
        raise ValueError(f"{heads} heads do not divide model width {d_model}")
    return d_model // heads


def derive_prototypes(probe, vocab_embedding):
    """``probe @ E``: V' prototypes from a V-word embedding table."""
    if probe.shape[-1] != vocab_embedding.shape[0]:
        raise ShapeError(f"probe {probe.shape} does not match embedding table {vocab_embedding.shape}")
    if probe.shape[0] >= vocab_embedding.shape[0]:
        raise ValueError(
            f"prototype count {probe.shape[0]} must be smaller than the vocabulary size {vocab_embedding.shape[0]}"
        )
    return probe @ vocab_embedding


def cross_attention_head(patches, prototypes, wq, wk, wv):
    """One head: ``softmax(Q K^T / sqrt(d_k)) V`` with Q from patches, K and V from prototypes."""
    d_m = patches.shape[-1]
    if prototypes.shape[-1] != d_m or wq.shape[0] != d_m or wk.shape != wq.shape or wv.shape != wq.shape:
        raise ShapeError(
            f"cross-attention shapes disagree: patches {patches.shape}, prototypes {prototypes.shape}, "
            f"W_Q {wq.shape}, W_K {wk.shape}, W_V {wv.shape}"
        )
    q = patches @ wq
    k = prototypes @ wk
    v = prototypes @ wv
    scores = (q @ k.T) * (1.0 / np.sqrt(wq.shape[1]))
    return ad.softmax(scores) @ v


def multi_head_reprogram(patches, prototypes, heads, wo, bo=None):
    """Concatenate the head outputs and merge them with ``wo`` (plus optional ``bo``).

    ``heads`` is a sequence of ``(W_Q, W_K, W_V)`` triples.
    """
    check_heads(patches.shape[-1], len(heads))
    outs = [cross_attention_head(patches, prototypes, *h) for h in heads]
    merged = ad.concat(outs, axis=-1) @ wo
    return merged if bo is None else merged + bo


def linear_reprogram(patches, w, b):
    """Ablation path: a plain linear map in place of the prototype attention."""
    if patches.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear reprogram shapes disagree: patches {patches.shape}, weight {w.shape}")
    return patches @ w + b
