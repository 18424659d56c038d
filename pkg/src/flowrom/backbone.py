"""Frozen pre-norm transformer encoder, prefix stripping and output head.

The encoder is shape-compatible with a small BERT-style stack, so exported
weights can be loaded through FLOWWGT; by default it is seeded Gaussian.
Parameters live in flat ``name -> array`` mappings using the names below,
which makes them easy to freeze, serialize and differentiate::

    vocab.embedding                         (V, d_m)
    backbone.l{j}.wq / wk / wv / wo         (d_m, d_m)
    backbone.l{j}.w1                        (d_m, d_ff)
    backbone.l{j}.w2                        (d_ff, d_m)
    backbone.l{j}.ln1.gamma / ln1.beta      (d_m,)
    backbone.l{j}.ln2.gamma / ln2.beta      (d_m,)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import flowwgt
from .numerics import ShapeError

__all__ = [
    "BackboneDims",
    "LN_EPS",
    "layer_names",
    "backbone_shapes",
    "encoder_forward",
    "forward_with_prefix",
    "project_output",
    "sinusoidal_positions",
    "seed_weights",
    "load_weights",
]

LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class BackboneDims:
    vocab_size: int = 2000
    d_model: int = 32
    depth: int = 2
    heads: int = 4
    d_ff: int = 128

    def __post_init__(self):
        if self.heads < 1 or self.d_model % self.heads:
            raise ValueError(f"{self.heads} backbone heads do not divide width {self.d_model}")


def layer_names(j: int) -> list[str]:
    p = f"backbone.l{j}."
    return [p + s for s in ("wq", "wk", "wv", "wo", "w1", "w2", "ln1.gamma", "ln1.beta", "ln2.gamma", "ln2.beta")]


def backbone_shapes(dims: BackboneDims) -> dict[str, tuple[int, ...]]:
    d, f = dims.d_model, dims.d_ff
    shapes = {"vocab.embedding": (dims.vocab_size, d)}
    for j in range(dims.depth):
        wq, wk, wv, wo, w1, w2, g1, b1, g2, b2 = layer_names(j)
        shapes.update({wq: (d, d), wk: (d, d), wv: (d, d), wo: (d, d), w1: (d, f), w2: (f, d)})
        shapes.update({g1: (d,), b1: (d,), g2: (d,), b2: (d,)})
    return shapes


def _self_attention(x, wq, wk, wv, wo, heads: int, key_bias=None, n_query=None):
    # queries come from the last ``n_query`` rows only (all rows by default)
    *lead, n, d = x.shape
    dk = d // heads
    nq = n if n_query is None else n_query

    def split(t, rows):
        return t.reshape(*lead, rows, heads, dk).swapaxes(-3, -2)

    xq = x if nq == n else x[..., n - nq:, :]
    q, k, v = split(xq @ wq, nq), split(x @ wk, n), split(x @ wv, n)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dk))
    if key_bias is not None:
        scores = scores + key_bias
    attn = ad.softmax(scores)
    return (attn @ v).swapaxes(-3, -2).reshape(*lead, nq, d) @ wo


def _key_bias(key_mask):
    """Additive score bias from a (B, N) boolean mask of usable keys."""
    mask = np.asarray(key_mask, dtype=bool)
    return np.where(mask, 0.0, -1e30)[:, None, None, :]


def encoder_forward(seq, params, depth: int, heads: int, key_mask=None, keep_last=None):
    """Run ``depth`` pre-norm layers over all rows of ``seq``.

    ``seq`` is N x d_m, or B x N x d_m for a batch; ``key_mask`` (B x N,
    batched only) marks the positions other rows may attend to. With
    ``keep_last`` only that many trailing rows are returned, and the final
    layer skips the work for the rows that would be dropped.
    """
    if seq.ndim not in (2, 3) or seq.shape[-2] < 1:
        raise ShapeError(f"encoder input must be N x d_m with N >= 1, got {seq.shape}")
    bias = None if key_mask is None else _key_bias(key_mask)
    n = seq.shape[-2]
    x = seq
    for j in range(depth):
        wq, wk, wv, wo, w1, w2, g1, b1, g2, b2 = (params[name] for name in layer_names(j))
        if wq.shape[0] != x.shape[-1]:
            raise ShapeError(f"layer {j} expects width {wq.shape[0]}, input has {x.shape[-1]}")
        nq = keep_last if j == depth - 1 and keep_last is not None else None
        attn = _self_attention(ad.layer_norm(x, g1, b1, LN_EPS), wq, wk, wv, wo, heads, bias, nq)
        x = (x if nq is None else x[..., n - nq:, :]) + attn
        x = x + ad.gelu(ad.layer_norm(x, g2, b2, LN_EPS) @ w1) @ w2
    if depth == 0 and keep_last is not None:
        x = x[..., n - keep_last:, :]
    return x


def sinusoidal_positions(n: int, d: int, offsets=None) -> np.ndarray:
    """Sinusoidal encodings; ``offsets`` (B,) shifts each batch row's origin."""
    pos = np.arange(n)[None, :] - (np.zeros(1) if offsets is None else np.asarray(offsets))[:, None]
    pos = np.maximum(pos, 0.0)[..., None]
    i = np.arange(d)
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe[0] if offsets is None else pe


def forward_with_prefix(prompt_emb, patches, params, depth: int, heads: int, positional: bool = False, key_mask=None):
    """Encode ``[prompt ; patches]`` and keep only the last D (patch) rows.

    Batched inputs carry a leading axis; left-padded prompts are described
    by ``key_mask`` over the concatenated sequence.
    """
    D = patches.shape[-2]
    if D == 0:
        raise ShapeError("no patch rows to encode")
    P = prompt_emb.shape[-2]
    if P and prompt_emb.shape[-1] != patches.shape[-1]:
        raise ShapeError(f"prompt width {prompt_emb.shape[-1]} differs from patch width {patches.shape[-1]}")
    seq = ad.concat([prompt_emb, patches], axis=-2) if P else patches
    if positional:
        offsets = None
        if key_mask is not None:
            offsets = (~np.asarray(key_mask, dtype=bool)).sum(axis=1)
        elif seq.ndim == 3:
            offsets = np.zeros(seq.shape[0])
        seq = seq + sinusoidal_positions(seq.shape[-2], seq.shape[-1], offsets)
    return encoder_forward(seq, params, depth, heads, key_mask, keep_last=D)


def project_output(reps, w_out, b_out):
    """Flatten each D x d_m block row-major and map affinely to H values."""
    *lead, D, d = reps.shape
    flat = reps.reshape(*lead, 1, D * d)
    if D * d != w_out.shape[0] or b_out.shape != (w_out.shape[1],):
        raise ShapeError(
            f"projection shapes disagree: flattened {D * d}, W_out {w_out.shape}, b_out {b_out.shape}"
        )
    return (flat @ w_out + b_out).reshape(*lead, w_out.shape[1])


def _f32(a: np.ndarray) -> np.ndarray:
    # seeded values are snapped to float32 so a FLOWWGT round trip is exact
    return a.astype(np.float32).astype(np.float64)


def seed_weights(seed: int, dims: BackboneDims = BackboneDims()) -> dict[str, np.ndarray]:
    """Deterministic Gaussian backbone and vocabulary embedding (std 0.02, unit layer norms)."""
    rng = np.random.default_rng([seed, 0x5EED])
    out = {}
    for name, shape in backbone_shapes(dims).items():
        if name.endswith("gamma"):
            out[name] = np.ones(shape)
        elif name.endswith("beta"):
            out[name] = np.zeros(shape)
        else:
            out[name] = _f32(rng.normal(0.0, INIT_STD, size=shape))
    return out


def load_weights(tensors: dict[str, np.ndarray], dims: BackboneDims) -> dict[str, np.ndarray]:
    """Validate and extract the backbone and vocabulary tensors from a container."""
    return {name: flowwgt.require(tensors, name, shape).copy() for name, shape in backbone_shapes(dims).items()}
