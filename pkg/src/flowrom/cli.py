"""Command-line entry point (``flowrom <subcommand> ...``).

Exit codes: 0 success, 1 validation error (bad flag, missing file, invalid
config), 2 runtime failure. Each successful command prints one ``key=value``
line on stdout; progress goes to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import dataio, flowwgt, pod
from .backbone import seed_weights
from .model import VARIANTS, ArchConfig
from .rompipe import ExtrapolationError, build_rom_multi, evaluate_rmse, load_rom, run_protocol, save_rom
from .train import TrainConfig, TrainingError

__all__ = ["main", "run", "ValidationError"]

TRAIN_FRACTION = 0.8
ABLATE_RANK = 11


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _summary(**kv) -> None:
    print(" ".join(f"{k}={v}" for k, v in kv.items()), flush=True)


def _progress(label: str):
    def report(epoch, loss):
        print(f"[{label}] epoch {epoch} mean_loss={loss:.6g}", file=sys.stderr, flush=True)

    return report


def _existing(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{flag}: file '{path}' does not exist")
    return p


def _positive(name: str, value: int) -> int:
    if value < 1:
        raise ValidationError(f"{name} must be >= 1, got {value}")
    return value


def _load_cases(paths):
    cases = []
    for path in paths:
        cfg = dataio.load_case_config(_existing(path, "--case"))
        for variable, snap_path in cfg.datasets():
            cases.append((dataio.load_snapshots(snap_path), cfg.context(variable)))
    return cases


def _cmd_synth(a) -> dict:
    spec = dataio.load_synth_spec(_existing(a.spec, "--spec"))
    if a.seed is not None:
        spec = dataio.SynthWakeSpec(**{**spec.__dict__, "seed": a.seed})
    snap = dataio.synth_wake(spec)
    dataio.write_snapshots(snap, a.out)
    return dict(command="synth", nodes=snap.nodes, steps=snap.steps, out=a.out)


def _cmd_pod(a) -> dict:
    snap = dataio.load_snapshots(_existing(a.inp, "--in"))
    r = _positive("--rank", a.rank)
    if r > min(snap.nodes, snap.steps):
        raise ValidationError(f"--rank {r} exceeds min(nodes, steps) = {min(snap.nodes, snap.steps)}")
    basis = pod.fit_basis(snap, r)
    flowwgt.save({"pod.basis": basis.basis, "pod.sigma": basis.singular_values, "pod.mean": basis.mean_field}, a.out)
    energy = pod.energy_spectrum(basis)
    if a.energy_csv:
        lines = ["mode,sigma,cumulative_energy"]
        lines += [f"{i + 1},{s!r},{float(e)!r}" for i, (s, e) in enumerate(zip(basis.singular_values, energy))]
        Path(a.energy_csv).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")
    return dict(command="pod", rank=r, energy=f"{float(energy[r - 1]):.6g}", out=a.out)


def _cmd_train(a) -> dict:
    arch = ArchConfig(lookback=_positive("--window", a.window), horizon=_positive("--horizon", a.horizon), variant=a.variant)
    config = TrainConfig(epochs=_positive("--epochs", a.epochs), batch_size=_positive("--batch", a.batch), seed=a.seed, variant=a.variant)
    cases = _load_cases(a.case)
    rom = build_rom_multi(cases, _positive("--rank", a.rank), TRAIN_FRACTION, config, arch, progress=_progress(a.variant))
    save_rom(rom, a.out)
    return dict(command="train", variant=a.variant, datasets=len(cases), final_loss=f"{rom.history[-1]:.6g}", out=a.out)


def _variant_out(out: str, variable: str, many: bool) -> str:
    if not many:
        return out
    p = Path(out)
    return str(p.with_name(f"{p.stem}.{variable}{p.suffix}"))


def _cmd_extrapolate(a) -> dict:
    rom = load_rom(_existing(a.model, "--model"))
    if not 0 < a.seed_fraction <= 1:
        raise ValidationError(f"--seed-fraction must lie in (0, 1], got {a.seed_fraction}")
    cases = _load_cases([a.case])
    means, outs = [], []
    for snap, ctx in cases:
        res = run_protocol(rom, snap, ctx, a.seed_fraction, a.to_step)
        out = _variant_out(a.out, ctx.variable, len(cases) > 1)
        dataio.write_snapshots(res.fields_pred, out)
        means.append(res.rmse_mean)
        outs.append(out)
    return dict(command="extrapolate", steps=a.to_step, rmse_mean=f"{float(np.mean(means)):.6g}", out=",".join(outs))


def _cmd_eval(a) -> dict:
    pred = dataio.load_snapshots(_existing(a.pred, "--pred"))
    truth = dataio.load_snapshots(_existing(a.truth, "--truth"))
    if pred.nodes != truth.nodes:
        raise ValidationError(f"--pred has {pred.nodes} nodes, --truth has {truth.nodes}")
    steps = min(pred.steps, truth.steps)
    if steps < 2:
        raise ValidationError("need at least 2 overlapping steps")
    pred, truth_c = pred.columns(0, steps), truth.columns(0, steps)
    per_step, mean = evaluate_rmse(pred, truth_c)
    dataio.export_csv(per_step, a.csv)
    if a.heatmap_dir:
        d = Path(a.heatmap_dir)
        d.mkdir(parents=True, exist_ok=True)
        grid = truth.grid or pred.grid
        if grid is None:
            raise ValidationError("--heatmap-dir needs snapshots with a grid")
        last = steps - 1
        dataio.export_heatmap(pred.data[:, last], grid, d / "pred_last.ppm")
        dataio.export_heatmap(truth_c.data[:, last], grid, d / "truth_last.ppm")
        dataio.export_heatmap(np.abs(pred.data[:, last] - truth_c.data[:, last]), grid, d / "abs_error_last.ppm")
    return dict(command="eval", steps=steps, rmse_mean=f"{mean:.6g}", csv=a.csv)


def ablation_medians(cases, seeds, r: int = ABLATE_RANK, base_seed: int = 0, progress=None,
                     seed_fraction: float = 0.1, to_step: int = 90) -> dict[str, float]:
    """Median (over seeds) of the case-averaged protocol RMSE for every variant."""
    table = {}
    for variant in VARIANTS:
        scores = []
        for s in range(base_seed, base_seed + seeds):
            config = TrainConfig(seed=s, variant=variant)
            rom = build_rom_multi(cases, r, TRAIN_FRACTION, config, ArchConfig(variant=variant),
                                  progress=progress(f"{variant} seed {s}") if progress else None)
            scores.append(float(np.mean([run_protocol(rom, snap, ctx, seed_fraction, to_step).rmse_mean
                                    for snap, ctx in cases])))
        table[variant] = float(np.median(scores))
        print(f"variant={variant} median_rmse={table[variant]:.6g} per_seed={','.join(f'{x:.4g}' for x in scores)}",
              file=sys.stderr, flush=True)
    return table


def _cmd_ablate(a) -> dict:
    cases = _load_cases(a.case)
    table = ablation_medians(cases, _positive("--seeds", a.seeds), _positive("--rank", a.rank), a.seed, _progress,
                             a.seed_fraction, a.to_step)
    return dict(command="ablate", seeds=a.seeds, **{k: f"{v:.6g}" for k, v in table.items()})


def _cmd_export_weights(a) -> dict:
    if a.model:
        rom = load_rom(_existing(a.model, "--model"))
        names = [n for n in rom.params.tensors if n.startswith(("backbone.", "vocab."))]
        tensors = {n: rom.params.tensors[n] for n in names}
    else:
        tensors = seed_weights(a.seed, ArchConfig().backbone)
    flowwgt.save(tensors, a.out)
    return dict(command="export-weights", tensors=len(tensors), out=a.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowrom", description="POD reduced-order flow models with a reprogrammed frozen backbone.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic wake snapshot file")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)

    s = sub.add_parser("pod", help="fit a POD basis")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--rank", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--energy-csv")

    s = sub.add_parser("train", help="fit bases and train the forecaster")
    s.add_argument("--case", nargs="+", required=True)
    s.add_argument("--rank", type=int, required=True)
    s.add_argument("--window", type=int, default=10)
    s.add_argument("--horizon", type=int, default=1)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--batch", type=int, default=12)
    s.add_argument("--variant", choices=VARIANTS, default="full")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("extrapolate", help="autoregressive extrapolation from a seed prefix")
    s.add_argument("--model", required=True)
    s.add_argument("--case", required=True)
    s.add_argument("--seed-fraction", type=float, default=0.1)
    s.add_argument("--to-step", type=int, default=90)
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="per-step RMSE of a prediction against the truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--csv", required=True)
    s.add_argument("--heatmap-dir")

    s = sub.add_parser("ablate", help="median protocol RMSE of every model variant")
    s.add_argument("--case", nargs="+", required=True)
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rank", type=int, default=ABLATE_RANK)
    s.add_argument("--seed-fraction", type=float, default=0.1)
    s.add_argument("--to-step", type=int, default=90)

    s = sub.add_parser("export-weights", help="write backbone and vocabulary tensors as FLOWWGT")
    s.add_argument("--out", required=True)
    s.add_argument("--model")
    s.add_argument("--seed", type=int, default=0)
    return p


_COMMANDS = {
    "synth": _cmd_synth,
    "pod": _cmd_pod,
    "train": _cmd_train,
    "extrapolate": _cmd_extrapolate,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "export-weights": _cmd_export_weights,
}

_VALIDATION = (ValidationError, dataio.ConfigError, flowwgt.FormatError, ValueError, KeyError, FileNotFoundError)


def _threads() -> int:
    raw = os.environ.get("FLOWROM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"FLOWROM_THREADS must be an integer, got '{raw}'") from None
    return _positive("FLOWROM_THREADS", n)


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        with threadpool_limits(limits=_threads()):
            summary = _COMMANDS[args.command](args)
    except _VALIDATION as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"flowrom: error: {msg}", file=sys.stderr)
        return 1
    except (ExtrapolationError, TrainingError, OSError, ArithmeticError) as exc:
        print(f"flowrom: runtime failure: {exc}", file=sys.stderr)
        return 2
    _summary(**summary)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
