"""FLOWWGT v1: a flat container of named float32 tensors.

Layout (all integers unsigned 64-bit little-endian)::

    b"FLOWWGT1"
    tensor count
    per tensor:
        name length, UTF-8 name bytes,
        rank, dims[rank],
        prod(dims) little-endian float32 values, row-major

Values are rounded to float32 on save and widened back to float64 on load.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["MAGIC", "FormatError", "dumps", "loads", "save", "load", "require"]

MAGIC = b"FLOWWGT1"
_U64 = struct.Struct("<Q")
_MAX_RANK = 8


class FormatError(ValueError):
    """Malformed or truncated container."""


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, _U64.pack(len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(_U64.pack(len(raw)))
        out.append(raw)
        out.append(_U64.pack(arr.ndim))
        out.extend(_U64.pack(d) for d in arr.shape)
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise FormatError(
                f"truncated FLOWWGT container reading {what}: expected {n} bytes at offset "
                f"{self.pos}, only {len(self.buf) - self.pos} available "
                f"(need {end} bytes total, file has {len(self.buf)})"
            )
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def u64(self, what: str) -> int:
        return _U64.unpack(self.take(8, what))[0]


def loads(buf: bytes) -> dict[str, np.ndarray]:
    r = _Reader(buf)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}: expected {MAGIC!r}")
    count = r.u64("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        nlen = r.u64(f"name length of tensor {i}")
        if nlen > len(buf):
            raise FormatError(f"name length {nlen} of tensor {i} exceeds file size at offset {r.pos - 8}")
        name = r.take(nlen, f"name of tensor {i}").decode("utf-8")
        rank = r.u64(f"rank of '{name}'")
        if rank > _MAX_RANK:
            raise FormatError(f"tensor '{name}' has rank {rank}, at most {_MAX_RANK} supported")
        dims = tuple(r.u64(f"dim {k} of '{name}'") for k in range(rank))
        size = int(np.prod(dims, dtype=np.uint64)) if dims else 1
        payload = r.take(4 * size, f"payload of '{name}'")
        if name in tensors:
            raise FormatError(f"duplicate tensor name '{name}'")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after the last tensor at offset {r.pos}")
    return tensors


def save(tensors: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def require(tensors: dict[str, np.ndarray], name: str, shape: tuple | None = None) -> np.ndarray:
    """Fetch one tensor, checking presence and (optionally) its shape."""
    if name not in tensors:
        raise FormatError(f"missing tensor '{name}'")
    arr = tensors[name]
    if shape is not None and arr.shape != tuple(shape):
        raise FormatError(f"tensor '{name}' has shape {arr.shape}, expected {tuple(shape)}")
    return arr
