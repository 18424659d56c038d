"""Prompt-as-prefix construction.

A prompt has three sections (dataset context, task guidance, input
statistics) filled from a versioned template file. The rendered text is
tokenized with a word-level vocabulary in which numbers are spelled out one
symbol per token, then looked up in the frozen embedding table.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .series import Window

__all__ = [
    "TEMPLATE_VERSION",
    "SECTIONS",
    "DatasetContext",
    "TaskSpec",
    "InputStats",
    "Template",
    "Vocab",
    "load_template",
    "compute_stats",
    "format_number",
    "render_sections",
    "render_prompt",
    "normalize_tokens",
    "tokenize",
    "detokenize",
    "embed_tokens",
    "shuffle_ids",
]

TEMPLATE_VERSION = "v1"
SECTIONS = ("context", "task", "stats")
TREND_DEADBAND = 1e-9
DEFAULT_TOP_LAGS = 5

_PLACEHOLDERS = {
    "case_name", "variable", "mach", "aoa", "reynolds", "lookback", "horizon",
    "min", "max", "median", "trend", "lags",
}
_NUMBER = r"\d+(?:\.\d+)?(?:e[-+]?\d+)?"
_TOKEN_RE = re.compile(rf"(?P<num>{_NUMBER})|(?P<word>[a-z]+)|(?P<punct>[^\sa-z0-9])")


@dataclass(frozen=True)
class DatasetContext:
    case_name: str
    variable: str
    mach: float
    aoa: float
    reynolds: float
    description: str = ""

    def __post_init__(self):
        if self.mach < 0:
            raise ValueError(f"mach must be non-negative, got {self.mach}")
        if not self.reynolds > 0:
            raise ValueError(f"reynolds must be positive, got {self.reynolds}")


@dataclass(frozen=True)
class TaskSpec:
    lookback: int
    horizon: int
    instruction: str = ""

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1:
            raise ValueError(f"lookback and horizon must be >= 1, got {self.lookback}, {self.horizon}")


@dataclass(frozen=True)
class InputStats:
    min: float
    max: float
    median: float
    trend: str
    top_lags: tuple[int, ...]


@dataclass(frozen=True)
class Template:
    version: str
    sections: dict[str, str]


@dataclass
class Vocab:
    tokens: list[str]
    embedding: np.ndarray | None = None
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != "<unk>":
            raise ValueError("vocabulary must start with '<unk>'")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    unk_id = 0

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def load(cls, path=None) -> "Vocab":
        if path is None:
            text = resources.files("flowrom.data").joinpath("vocab.txt").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls([line for line in text.split("\n") if line != ""])

    @property
    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def load_template(path=None) -> Template:
    """Parse a template file with ``[context]``, ``[task]`` and ``[stats]`` sections."""
    if path is None:
        name = f"template_{TEMPLATE_VERSION}.txt"
        text = resources.files("flowrom.data").joinpath(name).read_text(encoding="utf-8")
        version = TEMPLATE_VERSION
    else:
        text = Path(path).read_text(encoding="utf-8")
        version = Path(path).stem
    sections: dict[str, list[str]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            current = m.group(1)
            if current not in SECTIONS:
                raise ValueError(f"unknown template section [{current}]")
            sections[current] = []
        elif current is None:
            raise ValueError("template text before the first section header")
        else:
            sections[current].append(line)
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise ValueError(f"template is missing sections {missing}")
    joined = {s: " ".join(sections[s]) for s in SECTIONS}
    used = set(re.findall(r"\{(\w+)\}", " ".join(joined.values())))
    if used - _PLACEHOLDERS:
        raise ValueError(f"unknown placeholders {sorted(used - _PLACEHOLDERS)}")
    return Template(version, joined)


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    """Biased autocorrelation r(1..T-1) via a zero-padded FFT."""
    T = x.size
    xc = x - x.mean()
    nfft = 1 << (2 * T - 1).bit_length()
    spec = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)[:T]
    if acov[0] <= 0.0:
        return np.zeros(T - 1)
    return acov[1:] / acov[0]


def compute_stats(w: Window, k: int = DEFAULT_TOP_LAGS) -> InputStats:
    x = w.values
    T = x.size
    if T < 2:
        raise ValueError(f"statistics need a window of at least 2 steps, got {T}")
    if not 0 <= k <= T - 1:
        raise ValueError(f"cannot report {k} lags for a window of length {T}")
    t = np.arange(T, dtype=np.float64)
    t -= t.mean()
    slope = float(t @ (x - x.mean()) / (t @ t))
    if abs(slope) < TREND_DEADBAND:
        trend = "flat"
    else:
        trend = "up" if slope > 0 else "down"
    acf = _autocorrelation(x)
    order = np.argsort(-np.round(acf, 12), kind="stable")[:k]
    return InputStats(float(x.min()), float(x.max()), float(np.median(x)), trend, tuple(int(i) + 1 for i in order))


def format_number(x: float) -> str:
    """Four significant digits, general format."""
    s = f"{float(x):.4g}"
    return "0" if s == "-0" else s


def render_sections(ctx: DatasetContext, task: TaskSpec, stats: InputStats, template: Template | None = None) -> dict[str, str]:
    template = template or load_template()
    values = {
        "case_name": ctx.case_name,
        "variable": ctx.variable,
        "mach": format_number(ctx.mach),
        "aoa": format_number(ctx.aoa),
        "reynolds": format_number(ctx.reynolds),
        "lookback": str(task.lookback),
        "horizon": str(task.horizon),
        "min": format_number(stats.min),
        "max": format_number(stats.max),
        "median": format_number(stats.median),
        "trend": stats.trend,
        "lags": " , ".join(str(lag) for lag in stats.top_lags) if stats.top_lags else "none",
    }
    return {s: template.sections[s].format_map(values) for s in SECTIONS}


def render_prompt(ctx: DatasetContext, task: TaskSpec, stats: InputStats, template: Template | None = None) -> str:
    sections = render_sections(ctx, task, stats, template)
    return "\n".join(sections[s] for s in SECTIONS)


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, split words and punctuation, spell numbers symbol by symbol."""
    out: list[str] = []
    for m in _TOKEN_RE.finditer(text.lower()):
        kind = m.lastgroup
        tok = m.group()
        if kind == "num":
            out.extend(format_number(float(tok)))
        else:
            out.append(tok)
    return out


def tokenize(text: str, vocab: Vocab) -> list[int]:
    return [vocab.index.get(tok, vocab.unk_id) for tok in normalize_tokens(text)]


def detokenize(ids, vocab: Vocab) -> str:
    return " ".join(vocab.tokens[i] for i in ids)


def embed_tokens(ids, table):
    """Rows of the (frozen) embedding table for ``ids``: P x d_m.

    ``table`` is a :class:`Vocab` carrying an embedding, a matrix, or a
    recorded tensor.
    """
    if isinstance(table, Vocab):
        if table.embedding is None:
            raise ValueError("vocabulary has no embedding table attached")
        table = table.embedding
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        bad = int(ids[(ids < 0) | (ids >= n_rows)][0])
        raise IndexError(f"token id {bad} outside the embedding table of {n_rows} rows")
    if ids.size == 0:
        return np.zeros((0, table.shape[1]))
    return ad.take_rows(table, ids)


def shuffle_ids(ids, seed: int) -> list[int]:
    """Seeded permutation of a token sequence (same multiset, scrambled order)."""
    ids = list(ids)
    perm = np.random.default_rng([seed, len(ids)]).permutation(len(ids))
    return [ids[i] for i in perm]
