"""End-to-end reduced-order model: POD basis + learned forecaster on its coefficients.

Typical use::

    rom = build_rom(snapshots, ctx, r=11, train_fraction=0.8, config=TrainConfig(seed=0))
    result = run_protocol(rom, snapshots, seed_fraction=0.1, to_step=90)
    result.rmse_mean
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flowwgt
from . import pod
from .model import ArchConfig, forward_batch, init_params, prompt_ids, trainable_names
from .pod import PodBasis, ReducedSeries, SnapshotMatrix
from .prompt import DatasetContext, TaskSpec, Template, Vocab, load_template
from .reprogram import derive_prototypes
from .series import Window, instance_denorm, instance_norm
from .train import ParamStore, TrainConfig, make_samples, train_model

__all__ = [
    "RomModel",
    "ForecastResult",
    "ExtrapolationError",
    "Dataset",
    "split_steps",
    "build_rom",
    "build_rom_multi",
    "forecast_window",
    "extrapolate",
    "evaluate_rmse",
    "run_protocol",
    "save_rom",
    "load_rom",
    "manifest_path",
]


class ExtrapolationError(RuntimeError):
    pass


@dataclass
class Dataset:
    """One (case, variable) pair with its own POD basis."""

    ctx: DatasetContext
    basis: PodBasis

    @property
    def key(self) -> str:
        return f"{self.ctx.case_name}/{self.ctx.variable}"


@dataclass
class RomModel:
    arch: ArchConfig
    params: ParamStore
    datasets: list[Dataset]
    vocab: Vocab
    template: Template
    config: TrainConfig
    train_fraction: float = 0.8
    history: list[float] = field(default_factory=list)

    @property
    def task(self) -> TaskSpec:
        return TaskSpec(self.arch.lookback, self.arch.horizon)

    @property
    def rank(self) -> int:
        return self.datasets[0].basis.rank

    def dataset_for(self, ctx: DatasetContext) -> Dataset | None:
        for d in self.datasets:
            if d.ctx.case_name == ctx.case_name and d.ctx.variable == ctx.variable:
                return d
        return None


@dataclass
class ForecastResult:
    reduced_pred: ReducedSeries
    fields_pred: SnapshotMatrix
    rmse_per_step: np.ndarray
    rmse_mean: float
    first_forecast_step: int = 0


def split_steps(n_steps: int, train_fraction: float) -> int:
    """Number of leading steps used for training (``floor(fraction * n)``)."""
    if not 0 < train_fraction <= 1:
        raise ValueError(f"train_fraction must lie in (0, 1], got {train_fraction}")
    return int(math.floor(train_fraction * n_steps + 1e-9))


def _f32(a: np.ndarray) -> np.ndarray:
    # FLOWWGT stores 32-bit floats; snapping here makes save/load lossless
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


def _snap_basis(b: PodBasis) -> PodBasis:
    return PodBasis(_f32(b.basis), _f32(b.singular_values), _f32(b.mean_field), b.centering)


def build_rom_multi(
    cases,
    r: int,
    train_fraction: float = 0.8,
    config: TrainConfig = TrainConfig(),
    arch: ArchConfig | None = None,
    centering: bool = True,
    vocab: Vocab | None = None,
    template: Template | None = None,
    backbone: dict | None = None,
    progress=None,
) -> RomModel:
    """Fit one basis per ``(snapshots, ctx)`` pair and train one shared forecaster.

    Windows from all cases are pooled; each keeps its own prompt context.
    """
    arch = arch or ArchConfig(variant=config.variant)
    if arch.variant != config.variant:
        raise ValueError(f"architecture variant '{arch.variant}' differs from training variant '{config.variant}'")
    vocab = vocab or Vocab.load()
    template = template or load_template()
    if len(vocab) != arch.vocab_size:
        raise ValueError(f"vocabulary has {len(vocab)} tokens, architecture expects {arch.vocab_size}")
    datasets, samples = [], []
    need = arch.lookback + arch.horizon
    for snapshots, ctx in cases:
        n_train = split_steps(snapshots.steps, train_fraction)
        if n_train < need:
            raise ValueError(
                f"case {ctx.case_name}/{ctx.variable}: {n_train} training steps, need at least {need} "
                f"(lookback {arch.lookback} + horizon {arch.horizon})"
            )
        if n_train == snapshots.steps:
            warnings.warn(f"case {ctx.case_name}/{ctx.variable}: train_fraction={train_fraction} leaves no validation steps")
        train = snapshots.columns(0, n_train)
        basis = _snap_basis(pod.fit_basis(train, r, centering))
        coeffs = pod.reduce_snapshots(basis, train).coeffs
        datasets.append(Dataset(ctx, basis))
        samples += make_samples(coeffs, ctx, arch, vocab, template, config.seed, source=f"{ctx.case_name}/{ctx.variable}")
    params = init_params(arch, config.seed, backbone)
    store, history = train_model(samples, config, arch, params, progress)
    store = ParamStore({k: _f32(v) for k, v in store.tensors.items()}, store.trainable,
                       {k: _f32(v) for k, v in store.m.items()}, {k: _f32(v) for k, v in store.v.items()}, store.step)
    return RomModel(arch, store, datasets, vocab, template, config, train_fraction, history)


def build_rom(snapshots: SnapshotMatrix, ctx: DatasetContext, r: int, train_fraction: float = 0.8,
              config: TrainConfig = TrainConfig(), **kwargs) -> RomModel:
    return build_rom_multi([(snapshots, ctx)], r, train_fraction, config, **kwargs)


def _prototypes(rom: RomModel):
    if rom.arch.variant == "linear_reprogram":
        return None
    t = rom.params.tensors
    return derive_prototypes(t["reprog.probe"], t["vocab.embedding"])


def forecast_window(rom: RomModel, windows, ctx: DatasetContext | None, prototypes=None) -> np.ndarray:
    """Next H reduced values for every channel of an (r x T) window block.

    Channels are forecast independently but evaluated as one batch.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2 or windows.shape[1] != rom.arch.lookback:
        raise ValueError(f"window block has shape {windows.shape}, expected (channels, {rom.arch.lookback})")
    if prototypes is None:
        prototypes = _prototypes(rom)
    normed, stats, ids = [], [], []
    for ch, values in enumerate(windows):
        w = Window(values, ch)
        n, st = instance_norm(w)
        normed.append(n.values)
        stats.append(st)
        ids.append(prompt_ids(w, ctx, rom.arch, rom.vocab, rom.template, rom.config.seed))
    y = forward_batch(rom.params.tensors, rom.arch, np.stack(normed), ids, prototypes)
    return np.stack([instance_denorm(row, st) for row, st in zip(y, stats)])


def extrapolate(rom: RomModel, seed_steps: ReducedSeries, total_steps: int, ctx: DatasetContext | None) -> ReducedSeries:
    """Autoregressively extend ``seed_steps`` to ``total_steps`` columns."""
    T = rom.arch.lookback
    if seed_steps.steps < T:
        raise ValueError(f"seed has {seed_steps.steps} steps, need at least the lookback {T}")
    coeffs = seed_steps.coeffs
    if total_steps <= coeffs.shape[1]:
        return ReducedSeries(coeffs[:, :max(total_steps, 0)].copy() if total_steps < coeffs.shape[1] else coeffs.copy())
    protos = _prototypes(rom)
    cols = [coeffs[:, j] for j in range(coeffs.shape[1])]
    while len(cols) < total_steps:
        window = np.stack(cols[-T:], axis=1)
        with np.errstate(all="ignore"):
            pred = forecast_window(rom, window, ctx, protos)
        if not np.all(np.isfinite(pred)):
            raise ExtrapolationError(f"non-finite prediction at step {len(cols) + 1}")
        cols.extend(pred[:, h] for h in range(pred.shape[1]))
    return ReducedSeries(np.stack(cols[:total_steps], axis=1))


def evaluate_rmse(pred: SnapshotMatrix, truth: SnapshotMatrix) -> tuple[np.ndarray, float]:
    """Per-step root mean square error over nodes, and its mean over steps."""
    if pred.data.shape != truth.data.shape:
        raise ValueError(f"prediction shape {pred.data.shape} differs from truth shape {truth.data.shape}")
    diff = truth.data - pred.data
    per_step = np.sqrt(np.sum(diff * diff, axis=0) / truth.nodes)
    return per_step, float(per_step.mean())


def run_protocol(
    rom: RomModel,
    truth: SnapshotMatrix,
    ctx: DatasetContext | None = None,
    seed_fraction: float = 0.1,
    to_step: int = 90,
    dataset: Dataset | None = None,
) -> ForecastResult:
    """Seed from the first ``seed_fraction`` of ``truth``, extrapolate to ``to_step``, and score."""
    if dataset is None:
        dataset = rom.dataset_for(ctx) if ctx is not None else rom.datasets[0]
        if dataset is None:
            raise KeyError(f"model has no basis for {ctx.case_name}/{ctx.variable}")
    ctx = ctx or dataset.ctx
    if to_step > truth.steps:
        raise ValueError(f"to_step {to_step} exceeds the {truth.steps} available truth steps")
    n_seed = max(split_steps(truth.steps, seed_fraction), rom.arch.lookback)
    seed_series = pod.reduce_snapshots(dataset.basis, truth.columns(0, n_seed))
    reduced = extrapolate(rom, seed_series, to_step, ctx if rom.arch.variant != "no_prompt" else None)
    fields = pod.reconstruct_series(dataset.basis, reduced, truth.grid)
    per_step, mean = evaluate_rmse(fields, truth.columns(0, to_step))
    return ForecastResult(reduced, fields, per_step, mean, n_seed)


# --- persistence ---------------------------------------------------------------

def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest")


def _pod_prefix(i: int) -> str:
    return "pod." if i == 0 else f"pod.{i}."


def save_rom(rom: RomModel, path) -> None:
    tensors = rom.params.to_tensors()
    lines = [
        "format=flowrom-model-1",
        f"template_version={rom.template.version}",
        f"vocab_sha256={rom.vocab.digest}",
        f"rank={rom.rank}",
        f"centering={int(rom.datasets[0].basis.centering)}",
        f"train_fraction={rom.train_fraction!r}",
        f"seed={rom.config.seed}",
        f"epochs={rom.config.epochs}",
        f"batch_size={rom.config.batch_size}",
        f"learning_rate={rom.config.learning_rate!r}",
        f"train_backbone_norms={int(rom.config.train_backbone_norms)}",
        f"datasets={len(rom.datasets)}",
    ]
    lines += [f"arch.{k}={v}" for k, v in rom.arch.to_dict().items()]
    for i, d in enumerate(rom.datasets):
        p = _pod_prefix(i)
        tensors[p + "basis"] = d.basis.basis
        tensors[p + "sigma"] = d.basis.singular_values
        tensors[p + "mean"] = d.basis.mean_field
        c = d.ctx
        lines += [
            f"dataset.{i}.case_name={c.case_name}",
            f"dataset.{i}.variable={c.variable}",
            f"dataset.{i}.mach={c.mach!r}",
            f"dataset.{i}.aoa={c.aoa!r}",
            f"dataset.{i}.reynolds={c.reynolds!r}",
            f"dataset.{i}.description={c.description}",
        ]
    flowwgt.save(tensors, path)
    manifest_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")


def load_rom(path, vocab: Vocab | None = None, template: Template | None = None) -> RomModel:
    from .dataio import parse_key_values

    mpath = manifest_path(path)
    kv = parse_key_values(mpath.read_text(encoding="utf-8"), str(mpath))
    if kv.get("format") != "flowrom-model-1":
        raise flowwgt.FormatError(f"{mpath}: unsupported model format {kv.get('format')!r}")
    vocab = vocab or Vocab.load()
    if vocab.digest != kv["vocab_sha256"]:
        raise flowwgt.FormatError(f"{mpath}: vocabulary hash does not match the model")
    template = template or load_template()
    if template.version != kv["template_version"]:
        raise flowwgt.FormatError(
            f"{mpath}: model used template {kv['template_version']}, loaded template is {template.version}"
        )
    arch = ArchConfig.from_dict({k[5:]: v for k, v in kv.items() if k.startswith("arch.")})
    config = TrainConfig(
        epochs=int(kv["epochs"]), batch_size=int(kv["batch_size"]), learning_rate=float(kv["learning_rate"]),
        seed=int(kv["seed"]), variant=arch.variant, train_backbone_norms=bool(int(kv["train_backbone_norms"])),
    )
    tensors = flowwgt.load(path)
    for name, ref in init_params(arch, 0).items():
        flowwgt.require(tensors, name, ref.shape)
    store = ParamStore.from_tensors(tensors, trainable_names(arch, config.train_backbone_norms))
    centering = bool(int(kv["centering"]))
    datasets = []
    for i in range(int(kv["datasets"])):
        p = _pod_prefix(i)
        basis = PodBasis(
            flowwgt.require(tensors, p + "basis"), flowwgt.require(tensors, p + "sigma"),
            flowwgt.require(tensors, p + "mean"), centering,
        )
        ctx = DatasetContext(
            kv[f"dataset.{i}.case_name"], kv[f"dataset.{i}.variable"], float(kv[f"dataset.{i}.mach"]),
            float(kv[f"dataset.{i}.aoa"]), float(kv[f"dataset.{i}.reynolds"]), kv.get(f"dataset.{i}.description", ""),
        )
        datasets.append(Dataset(ctx, basis))
    return RomModel(arch, store, datasets, vocab, template, config, float(kv["train_fraction"]))
