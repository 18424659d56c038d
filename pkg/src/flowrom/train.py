"""Training: MSE loss, Adam on the trainable partition, deterministic epochs.

Gradients are taken with :mod:`flowrom.autodiff` through the whole model,
including the frozen backbone and vocabulary embedding; frozen tensors get
gradients but never updates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import VARIANTS, ArchConfig, forward_batch, prompt_ids, trainable_names
from .prompt import DatasetContext, Template, Vocab
from .reprogram import derive_prototypes
from .series import Window, instance_norm

__all__ = [
    "TrainConfig",
    "ParamStore",
    "Sample",
    "TrainingError",
    "mse_loss",
    "adam_step",
    "adam_step_reference",
    "make_samples",
    "batch_loss",
    "batch_gradients",
    "train_model",
]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 12
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    variant: str = "full"
    train_backbone_norms: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"epochs and batch_size must be >= 1, got {self.epochs}, {self.batch_size}")
        if self.learning_rate < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValueError("invalid Adam hyperparameters")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")


@dataclass
class ParamStore:
    tensors: dict[str, np.ndarray]
    trainable: tuple[str, ...]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        self.trainable = tuple(self.trainable)
        missing = [n for n in self.trainable if n not in self.tensors]
        if missing:
            raise KeyError(f"trainable names without tensors: {missing}")
        for n in self.trainable:
            self.m.setdefault(n, np.zeros_like(self.tensors[n]))
            self.v.setdefault(n, np.zeros_like(self.tensors[n]))

    @property
    def frozen(self) -> tuple[str, ...]:
        t = set(self.trainable)
        return tuple(n for n in self.tensors if n not in t)

    def to_tensors(self) -> dict[str, np.ndarray]:
        """Flat mapping for FLOWWGT, optimizer moments under ``opt.*``."""
        out = dict(self.tensors)
        for n in self.trainable:
            out[f"opt.m.{n}"] = self.m[n]
            out[f"opt.v.{n}"] = self.v[n]
        out["opt.step"] = np.array([float(self.step)])
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], trainable) -> "ParamStore":
        plain = {k: v for k, v in tensors.items() if not k.startswith("opt.") and not k.startswith("pod.")}
        m = {n: tensors[f"opt.m.{n}"] for n in trainable if f"opt.m.{n}" in tensors}
        v = {n: tensors[f"opt.v.{n}"] for n in trainable if f"opt.v.{n}" in tensors}
        step = int(tensors["opt.step"][0]) if "opt.step" in tensors else 0
        return cls(plain, tuple(trainable), m, v, step)


@dataclass(frozen=True)
class Sample:
    """One supervised window in normalized scale, with its prompt token ids."""

    x: np.ndarray
    y: np.ndarray
    ids: tuple[int, ...]
    source: str = ""


def mse_loss(pred, target):
    return ad.mse(pred, target)


def _check_grads(store: ParamStore, grads: dict):
    extra = sorted(set(grads) - set(store.trainable))
    missing = sorted(set(store.trainable) - set(grads))
    if extra or missing:
        raise KeyError(f"gradient set mismatch: missing {missing}, unexpected {extra}")


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], config: TrainConfig) -> ParamStore:
    """One bias-corrected Adam update of the trainable tensors; returns a new store."""
    _check_grads(store, grads)
    t = store.step + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    tensors, m_new, v_new = dict(store.tensors), {}, {}
    for n in store.trainable:
        g = grads[n]
        m = b1 * store.m[n] + (1.0 - b1) * g
        v = b2 * store.v[n] + (1.0 - b2) * (g * g)
        tensors[n] = store.tensors[n] - config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
        m_new[n], v_new[n] = m, v
    return ParamStore(tensors, store.trainable, m_new, v_new, t)


def adam_step_reference(store: ParamStore, grads: dict[str, np.ndarray], config: TrainConfig) -> ParamStore:
    """Element-by-element Adam, kept as an independent check on :func:`adam_step`."""
    _check_grads(store, grads)
    t = store.step + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    tensors, m_new, v_new = dict(store.tensors), {}, {}
    for n in store.trainable:
        p = store.tensors[n].ravel().tolist()
        m = store.m[n].ravel().tolist()
        v = store.v[n].ravel().tolist()
        g = np.asarray(grads[n], dtype=np.float64).ravel().tolist()
        for i in range(len(p)):
            m[i] = b1 * m[i] + (1.0 - b1) * g[i]
            v[i] = b2 * v[i] + (1.0 - b2) * (g[i] * g[i])
            p[i] = p[i] - config.learning_rate * (m[i] / c1) / (math.sqrt(v[i] / c2) + config.eps)
        shape = store.tensors[n].shape
        tensors[n] = np.array(p).reshape(shape)
        m_new[n] = np.array(m).reshape(shape)
        v_new[n] = np.array(v).reshape(shape)
    return ParamStore(tensors, store.trainable, m_new, v_new, t)


def make_samples(
    coeffs: np.ndarray,
    ctx: DatasetContext | None,
    arch: ArchConfig,
    vocab: Vocab,
    template: Template | None = None,
    seed: int = 0,
    source: str = "",
) -> list[Sample]:
    """Slide a (lookback + horizon) window with stride 1 over every channel."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    T, H = arch.lookback, arch.horizon
    out = []
    for ch in range(coeffs.shape[0]):
        series = coeffs[ch]
        for start in range(series.size - T - H + 1):
            w = Window(series[start:start + T], ch, start)
            normed, stats = instance_norm(w)
            y = (series[start + T:start + T + H] - stats.mean) / stats.scale
            ids = prompt_ids(w, ctx, arch, vocab, template, seed)
            out.append(Sample(normed.values, y, tuple(ids), source))
    return out


def _leaves(tensors: dict[str, np.ndarray]) -> dict[str, ad.Tensor]:
    return {n: ad.Tensor(v, name=n) for n, v in tensors.items()}


def batch_loss(params, arch: ArchConfig, batch):
    """Mean per-window MSE over ``batch`` (arrays or recorded tensors).

    Every window has the same horizon, so the mean over the B x H block
    equals the mean of the per-window losses.
    """
    prototypes = None
    if arch.variant != "linear_reprogram":
        prototypes = derive_prototypes(params["reprog.probe"], params["vocab.embedding"])
    x = np.stack([s.x for s in batch])
    y = np.stack([s.y for s in batch])
    pred = forward_batch(params, arch, x, [s.ids for s in batch], prototypes)
    return mse_loss(pred, y)


def batch_gradients(tensors: dict[str, np.ndarray], arch: ArchConfig, batch) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients for every tensor (frozen ones included)."""
    leaves = _leaves(tensors)
    loss = batch_loss(leaves, arch, batch)
    grads = ad.backward(loss)
    for n, leaf in leaves.items():
        if n not in grads:
            grads[n] = np.zeros_like(leaf.value)
    return float(loss.value), grads


def train_model(samples, config: TrainConfig, arch: ArchConfig, params: dict[str, np.ndarray], progress=None):
    """Train on ``samples``; returns ``(ParamStore, per-epoch mean losses)``.

    Batches are drawn in a seeded shuffled order, one fixed permutation per
    epoch, and every reduction runs in index order, so a given seed always
    produces the same bits.
    """
    samples = list(samples)
    if not samples:
        raise TrainingError("training set is empty")
    if arch.variant != config.variant:
        raise ValueError(f"architecture variant '{arch.variant}' differs from training variant '{config.variant}'")
    store = ParamStore(dict(params), trainable_names(arch, config.train_backbone_norms))
    history = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(samples))
        losses, weights = [], []
        for b, start in enumerate(range(0, len(samples), config.batch_size)):
            batch = [samples[i] for i in order[start:start + config.batch_size]]
            loss, grads = batch_gradients(store.tensors, arch, batch)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            store = adam_step(store, {n: grads[n] for n in store.trainable}, config)
            losses.append(loss)
            weights.append(len(batch))
        mean = float(np.dot(losses, weights) / sum(weights))
        history.append(mean)
        if progress is not None:
            progress(epoch + 1, mean)
        log.info("epoch %d/%d mean loss %.6g", epoch + 1, config.epochs, mean)
    return store, history
