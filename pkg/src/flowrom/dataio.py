"""Snapshot files, case configs, the synthetic wake generator and result export."""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pod import SnapshotMatrix
from .prompt import DatasetContext

__all__ = [
    "SNAP_MAGIC",
    "SnapFormatError",
    "ConfigError",
    "write_snapshots",
    "read_snapshots",
    "read_snapshots_csv",
    "write_snapshots_csv",
    "load_snapshots",
    "SynthWakeSpec",
    "synth_wake",
    "load_synth_spec",
    "CaseConfig",
    "load_case_config",
    "parse_key_values",
    "export_csv",
    "write_loss_csv",
    "export_heatmap",
    "color_ramp",
]

SNAP_MAGIC = b"FLOWSNP1"
_HEADER = struct.Struct("<8sQQQQ")


class SnapFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# --- FLOWSNAP -----------------------------------------------------------------

def write_snapshots(m: SnapshotMatrix, path) -> None:
    nx, ny = m.grid if m.grid is not None else (0, 0)
    header = _HEADER.pack(SNAP_MAGIC, m.nodes, m.steps, nx, ny)
    payload = np.asarray(m.data, dtype="<f8").tobytes(order="F")
    Path(path).write_bytes(header + payload)


def read_snapshots(path) -> SnapshotMatrix:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        if buf[:8] != SNAP_MAGIC[:len(buf[:8])]:
            raise SnapFormatError(f"bad magic {buf[:8]!r} at byte offset 0: expected {SNAP_MAGIC!r}")
        raise SnapFormatError(
            f"truncated FLOWSNAP header: {len(buf)} bytes, need {_HEADER.size} (stopped at byte offset {len(buf)})"
        )
    magic, n, n_s, nx, ny = _HEADER.unpack_from(buf)
    if magic != SNAP_MAGIC:
        raise SnapFormatError(f"bad magic {magic!r} at byte offset 0: expected {SNAP_MAGIC!r}")
    count = n * n_s
    if 8 * count + _HEADER.size >= 2**64:
        raise SnapFormatError(f"dimension overflow: {n} x {n_s} values declared in header at byte offset 8")
    need = _HEADER.size + 8 * count
    if len(buf) < need:
        raise SnapFormatError(
            f"truncated FLOWSNAP payload: expected {need} bytes, file has {len(buf)} "
            f"(data ends at byte offset {len(buf)})"
        )
    if len(buf) > need:
        raise SnapFormatError(f"{len(buf) - need} trailing bytes after payload at byte offset {need}")
    if (nx == 0) != (ny == 0):
        raise SnapFormatError(f"grid {nx}x{ny} at byte offset 24 must be both zero or both positive")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=_HEADER.size).reshape((n, n_s), order="F")
    grid = (int(nx), int(ny)) if nx else None
    try:
        return SnapshotMatrix(data.astype(np.float64), grid)
    except ValueError as exc:
        raise SnapFormatError(f"invalid snapshot matrix in {path}: {exc}") from exc


def write_snapshots_csv(m: SnapshotMatrix, path) -> None:
    """One column per snapshot; header row of 1-based step indices."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(range(1, m.steps + 1))
        for row in m.data:
            w.writerow(repr(float(x)) for x in row)


def read_snapshots_csv(path, grid=None) -> SnapshotMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SnapFormatError(f"{path} is empty")
    steps = len(rows[0])
    body = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != steps:
            raise SnapFormatError(f"{path} line {i} has {len(row)} columns, header has {steps}")
        body.append([float(x) for x in row])
    return SnapshotMatrix(np.array(body, dtype=np.float64).reshape(len(body), steps), grid)


def load_snapshots(path) -> SnapshotMatrix:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_snapshots_csv(path)
    return read_snapshots(path)


# --- synthetic wake -----------------------------------------------------------

@dataclass(frozen=True)
class SynthWakeSpec:
    """Convecting Gaussian-profiled sine modes over a uniform base flow of 1.

    Unset amplitudes, widths and phases take the defaults ``0.4 / sqrt(k)``,
    ``Ly * (0.1 + 0.05 k)`` and seeded uniform draws in ``[0, 2 pi)``.
    """

    nx: int = 32
    ny: int = 16
    Lx: float = 2.0
    Ly: float = 1.0
    modes: int = 2
    amplitudes: tuple[float, ...] | None = None
    widths: tuple[float, ...] | None = None
    phases: tuple[float, ...] | None = None
    speed: float = 1.0
    steps: int = 110
    dt: float = 0.05
    decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.modes < 1:
            raise ConfigError(f"modes must be >= 1, got {self.modes}")
        if self.nx < 4 or self.ny < 4:
            raise ConfigError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.steps < 2:
            raise ConfigError(f"steps must be >= 2, got {self.steps}")
        for name in ("amplitudes", "widths", "phases"):
            val = getattr(self, name)
            if val is not None and len(val) != self.modes:
                raise ConfigError(f"{name} has {len(val)} entries, expected {self.modes}")

    def resolved(self):
        k = np.arange(1, self.modes + 1)
        amps = np.asarray(self.amplitudes if self.amplitudes is not None else 0.4 / np.sqrt(k), dtype=np.float64)
        widths = np.asarray(self.widths if self.widths is not None else self.Ly * (0.1 + 0.05 * k), dtype=np.float64)
        if self.phases is not None:
            phases = np.asarray(self.phases, dtype=np.float64)
        else:
            phases = np.random.default_rng([self.seed, 0xFA5E]).uniform(0.0, 2.0 * np.pi, self.modes)
        return amps, widths, phases


def synth_wake(spec: SynthWakeSpec) -> SnapshotMatrix:
    """Sample ``1 + exp(-decay t) sum_k a_k g_k(y) sin(2 pi k (x - c t) / Lx + phi_k)``.

    Node ``j * nx + i`` sits at ``x = i Lx / nx``, ``y = j Ly / (ny - 1)``.
    """
    amps, widths, phases = spec.resolved()
    x = np.arange(spec.nx) * spec.Lx / spec.nx
    y = np.arange(spec.ny) * spec.Ly / (spec.ny - 1)
    X, Y = np.meshgrid(x, y)
    X, Y = X.ravel(), Y.ravel()
    t = np.arange(spec.steps) * spec.dt
    data = np.zeros((X.size, spec.steps))
    for k in range(spec.modes):
        profile = amps[k] * np.exp(-((Y - spec.Ly / 2) ** 2) / widths[k] ** 2)
        arg = 2.0 * np.pi * (k + 1) * (X[:, None] - spec.speed * t[None, :]) / spec.Lx + phases[k]
        data += profile[:, None] * np.sin(arg)
    data = 1.0 + np.exp(-spec.decay * t)[None, :] * data
    return SnapshotMatrix(data, (spec.nx, spec.ny))


# --- key=value configs --------------------------------------------------------

def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got '{line}'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        out[key] = value
    return out


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


_SYNTH_KEYS = {
    "nx": int, "ny": int, "Lx": float, "Ly": float, "modes": int, "amplitudes": _floats,
    "widths": _floats, "phases": _floats, "speed": float, "steps": int, "dt": float,
    "decay": float, "seed": int,
}


def load_synth_spec(path) -> SynthWakeSpec:
    kv = parse_key_values(Path(path).read_text(encoding="utf-8"), str(path))
    unknown = sorted(set(kv) - set(_SYNTH_KEYS))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    try:
        return SynthWakeSpec(**{k: _SYNTH_KEYS[k](v) for k, v in kv.items()})
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class CaseConfig:
    case_name: str
    mach: float
    aoa: float
    reynolds: float
    variables: tuple[str, ...]
    snapshots: tuple[Path, ...]
    description: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    def context(self, variable: str) -> DatasetContext:
        return DatasetContext(self.case_name, variable, self.mach, self.aoa, self.reynolds, self.description)

    def datasets(self):
        """``(variable, snapshot path)`` pairs in declaration order."""
        return list(zip(self.variables, self.snapshots))


_CASE_REQUIRED = ("case_name", "mach", "aoa", "reynolds", "variables", "snapshots")
_CASE_KEYS = set(_CASE_REQUIRED) | {"description"}


def load_case_config(path) -> CaseConfig:
    path = Path(path)
    kv = parse_key_values(path.read_text(encoding="utf-8"), str(path))
    unknown = sorted(set(kv) - _CASE_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown key '{unknown[0]}'")
    for key in _CASE_REQUIRED:
        if key not in kv:
            raise ConfigError(f"{path}: missing required key '{key}'")
    try:
        mach, aoa, reynolds = float(kv["mach"]), float(kv["aoa"]), float(kv["reynolds"])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if mach < 0:
        raise ConfigError(f"{path}: mach must be non-negative, got {mach}")
    if not reynolds > 0:
        raise ConfigError(f"{path}: reynolds must be positive, got {reynolds}")
    variables = tuple(v.strip() for v in kv["variables"].split(",") if v.strip())
    snaps = tuple((path.parent / s.strip()) for s in kv["snapshots"].split(",") if s.strip())
    if len(variables) != len(snaps) or not variables:
        raise ConfigError(f"{path}: {len(variables)} variables but {len(snaps)} snapshot files")
    for s in snaps:
        if not s.exists():
            raise ConfigError(f"{path}: snapshot file '{s}' does not exist")
    return CaseConfig(kv["case_name"], mach, aoa, reynolds, variables, snaps, kv.get("description", ""))


# --- exports ------------------------------------------------------------------

def export_csv(result, path, first_step: int = 1) -> None:
    """Per-step RMSE as ``step,rmse`` rows (LF endings).

    ``result`` is a :class:`~flowrom.rompipe.ForecastResult` or a plain vector.
    """
    per_step = getattr(result, "rmse_per_step", result)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "rmse"])
    for i, e in enumerate(np.asarray(per_step, dtype=np.float64)):
        w.writerow([first_step + i, repr(float(e))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def write_loss_csv(history, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "mean_loss"])
    for i, loss in enumerate(history, start=1):
        w.writerow([i, repr(float(loss))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def color_ramp() -> np.ndarray:
    """Fixed 256-entry blue-white-red ramp as uint8 RGB."""
    s = np.arange(256) / 255.0
    r = np.clip(2.0 * s, 0.0, 1.0)
    b = np.clip(2.0 - 2.0 * s, 0.0, 1.0)
    g = 1.0 - np.abs(2.0 * s - 1.0)
    return np.round(np.stack([r, g, b], axis=1) * 255.0).astype(np.uint8)


def export_heatmap(values, grid, path) -> Path:
    """Plain PPM of one field (top row = largest y) plus ``<path>.txt`` with min/max."""
    if grid is None:
        raise ValueError("heatmap export needs a grid layout (nx, ny)")
    nx, ny = grid
    v = np.asarray(values, dtype=np.float64).reshape(ny, nx)[::-1]
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    idx = np.zeros(v.shape, dtype=np.int64) if span <= 0 or not math.isfinite(span) else np.rint((v - lo) / span * 255).astype(np.int64)
    pixels = color_ramp()[idx]
    # plain (ASCII, P3) pixmap: one image row per text line
    rows = [" ".join(str(int(c)) for c in row.ravel()) for row in pixels]
    path = Path(path)
    path.write_text(f"P3\n{nx} {ny}\n255\n" + "\n".join(rows) + "\n", encoding="ascii", newline="")
    sidecar = Path(str(path) + ".txt")
    sidecar.write_text(f"min={lo!r}\nmax={hi!r}\n", encoding="utf-8", newline="")
    return sidecar
