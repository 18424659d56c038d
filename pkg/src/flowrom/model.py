"""The per-channel forecaster: patches -> reprogramming -> prompted backbone -> head.

Parameters are held in flat ``name -> array`` mappings. Trainable names::

    embed.w (L, d_m), embed.b (d_m,)
    reprog.probe (V', V)
    reprog.h{i}.wq / wk / wv (d_m, d_k)
    reprog.wo (h*d_k, d_m), reprog.bo (d_m,)
    reprog.lin.w (d_m, d_m), reprog.lin.b (d_m,)     linear_reprogram variant only
    head.w (D*d_m, H), head.b (H,)

plus the frozen backbone and vocabulary names from :mod:`flowrom.backbone`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .backbone import BackboneDims, backbone_shapes, forward_with_prefix, layer_names, project_output, seed_weights
from .prompt import (
    DEFAULT_TOP_LAGS,
    DatasetContext,
    TaskSpec,
    Template,
    Vocab,
    compute_stats,
    embed_tokens,
    render_prompt,
    shuffle_ids,
    tokenize,
)
from .reprogram import check_heads, derive_prototypes, linear_reprogram, multi_head_reprogram
from .series import Window, embed_patches, instance_denorm, instance_norm, make_patches, patch_count

__all__ = [
    "VARIANTS",
    "ArchConfig",
    "init_params",
    "trainable_names",
    "prompt_ids",
    "forward_normalized",
    "forward_batch",
    "forecast_channel",
]

VARIANTS = ("full", "no_prompt", "shuffled_prompt", "linear_reprogram")


@dataclass(frozen=True)
class ArchConfig:
    lookback: int = 10
    horizon: int = 1
    patch_len: int = 4
    stride: int = 2
    d_model: int = 32
    reprog_heads: int = 4
    n_prototypes: int = 32
    vocab_size: int = 2000
    depth: int = 2
    backbone_heads: int = 4
    d_ff: int = 128
    top_lags: int = DEFAULT_TOP_LAGS
    positional: bool = False
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        patch_count(self.lookback, self.patch_len, self.stride)
        check_heads(self.d_model, self.reprog_heads)
        if not 1 <= self.n_prototypes < self.vocab_size:
            raise ValueError(f"prototype count {self.n_prototypes} must lie in [1, {self.vocab_size})")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")

    @property
    def n_patches(self) -> int:
        return patch_count(self.lookback, self.patch_len, self.stride)

    @property
    def backbone(self) -> BackboneDims:
        return BackboneDims(self.vocab_size, self.d_model, self.depth, self.backbone_heads, self.d_ff)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise ValueError(f"unknown architecture key '{k}'")
            if kinds[k] in ("int", int):
                v = int(v)
            elif kinds[k] in ("bool", bool):
                v = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes", "on")
            else:
                v = str(v)
            out[k] = v
        return cls(**out)


def trainable_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    d, L = arch.d_model, arch.patch_len
    shapes = {"embed.w": (L, d), "embed.b": (d,)}
    if arch.variant == "linear_reprogram":
        shapes.update({"reprog.lin.w": (d, d), "reprog.lin.b": (d,)})
    else:
        dk = d // arch.reprog_heads
        shapes["reprog.probe"] = (arch.n_prototypes, arch.vocab_size)
        for i in range(arch.reprog_heads):
            for w in ("wq", "wk", "wv"):
                shapes[f"reprog.h{i}.{w}"] = (d, dk)
        shapes.update({"reprog.wo": (arch.reprog_heads * dk, d), "reprog.bo": (d,)})
    shapes.update({"head.w": (arch.n_patches * d, arch.horizon), "head.b": (arch.horizon,)})
    return shapes


def trainable_names(arch: ArchConfig, train_backbone_norms: bool = False) -> list[str]:
    names = list(trainable_shapes(arch))
    if train_backbone_norms:
        for j in range(arch.depth):
            names += [n for n in layer_names(j) if ".ln" in n]
    return names


def init_params(arch: ArchConfig, seed: int, backbone: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Seeded trainable parameters plus the (seeded or supplied) frozen backbone.

    Weights use the uniform fan-in rule ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``
    and biases start at zero. The probe is scaled so that the initial
    prototypes have roughly unit entries, which keeps the attention scores
    away from the flat regime at the start of training.
    """
    rng = np.random.default_rng([seed, 0x7A1])
    params: dict[str, np.ndarray] = {}
    for name, shape in trainable_shapes(arch).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        elif name == "reprog.probe":
            params[name] = rng.normal(0.0, 1.0 / (0.02 * np.sqrt(arch.vocab_size)), size=shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    if backbone is None:
        backbone = seed_weights(seed, arch.backbone)
    shapes = backbone_shapes(arch.backbone)
    for name, shape in shapes.items():
        if backbone[name].shape != shape:
            raise ValueError(f"backbone tensor '{name}' has shape {backbone[name].shape}, expected {shape}")
        params[name] = backbone[name]
    return {k: np.asarray(v, dtype=np.float64).astype(np.float32).astype(np.float64) for k, v in params.items()}


def prompt_ids(
    window: Window,
    ctx: DatasetContext | None,
    arch: ArchConfig,
    vocab: Vocab,
    template: Template | None = None,
    seed: int = 0,
) -> list[int]:
    """Token ids of the prompt prefix for one raw (un-normalized) window."""
    if arch.variant == "no_prompt" or ctx is None:
        return []
    stats = compute_stats(window, min(arch.top_lags, len(window) - 1))
    text = render_prompt(ctx, TaskSpec(arch.lookback, arch.horizon), stats, template)
    ids = tokenize(text, vocab)
    if arch.variant == "shuffled_prompt":
        ids = shuffle_ids(ids, seed)
    return ids


def forward_normalized(params, arch: ArchConfig, x_norm, ids, prototypes=None):
    """Forecast H normalized values from one normalized window.

    ``params`` may hold arrays or recorded tensors. ``prototypes`` can be
    passed in to share one ``probe @ E`` product across a batch.
    """
    patches = make_patches(Window(ad.value_of(x_norm)), arch.patch_len, arch.stride)
    emb = embed_patches(patches, params["embed.w"], params["embed.b"])
    rep = _reprogram(params, arch, emb, prototypes)
    prompt = embed_tokens(ids, params["vocab.embedding"])
    reps = forward_with_prefix(prompt, rep, params, arch.depth, arch.backbone_heads, arch.positional)
    return project_output(reps, params["head.w"], params["head.b"])


def _reprogram(params, arch: ArchConfig, emb, prototypes):
    if arch.variant == "linear_reprogram":
        return linear_reprogram(emb, params["reprog.lin.w"], params["reprog.lin.b"])
    if prototypes is None:
        prototypes = derive_prototypes(params["reprog.probe"], params["vocab.embedding"])
    heads = [tuple(params[f"reprog.h{i}.{w}"] for w in ("wq", "wk", "wv")) for i in range(arch.reprog_heads)]
    return multi_head_reprogram(emb, prototypes, heads, params["reprog.wo"], params["reprog.bo"])


def forward_batch(params, arch: ArchConfig, x_norm, id_lists, prototypes=None):
    """Forecast a B x H block from B normalized windows in one pass.

    Prompts of different lengths are left-padded and the padding is masked
    out of every attention row, so each output row equals the single-window
    :func:`forward_normalized` result up to rounding.
    """
    x = np.asarray(x_norm, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.lookback:
        raise ValueError(f"batch must be B x {arch.lookback}, got {x.shape}")
    B = x.shape[0]
    D = arch.n_patches
    starts = np.arange(D) * arch.stride
    patches = x[:, starts[:, None] + np.arange(arch.patch_len)[None, :]]
    emb = embed_patches(patches, params["embed.w"], params["embed.b"])
    rep = _reprogram(params, arch, emb, prototypes)
    if len(id_lists) != B:
        raise ValueError(f"{len(id_lists)} prompts for {B} windows")
    P = max((len(ids) for ids in id_lists), default=0)
    mask = None
    if P:
        padded = np.zeros((B, P), dtype=np.int64)
        mask = np.ones((B, P + D), dtype=bool)
        for b, ids in enumerate(id_lists):
            pad = P - len(ids)
            padded[b, pad:] = ids
            mask[b, :pad] = False
        prompt = ad.take_rows(params["vocab.embedding"], padded)
        if mask.all():
            mask = None
    else:
        prompt = np.zeros((B, 0, arch.d_model))
    reps = forward_with_prefix(prompt, rep, params, arch.depth, arch.backbone_heads, arch.positional, mask)
    return project_output(reps, params["head.w"], params["head.b"])


def forecast_channel(
    params,
    arch: ArchConfig,
    window: Window,
    ctx: DatasetContext | None,
    vocab: Vocab,
    template: Template | None = None,
    seed: int = 0,
    prototypes=None,
) -> np.ndarray:
    """Normalize, forecast, and denormalize the next H values of one channel."""
    if len(window) != arch.lookback:
        raise ValueError(f"window has {len(window)} steps, model expects {arch.lookback}")
    normed, stats = instance_norm(window)
    ids = prompt_ids(window, ctx, arch, vocab, template, seed)
    y = forward_normalized(params, arch, normed.values, ids, prototypes)
    return instance_denorm(ad.value_of(y), stats)
