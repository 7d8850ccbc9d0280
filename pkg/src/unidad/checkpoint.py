"""Binary checkpoint container.

Layout (little-endian)::

    b"UDAD" | u16 version
    b"MODL" | u32 count | count x array block
    b"OPTM" | u32 count | count x (u16 len, name, u64 step, 4 x f64 hyper, u32 slots, slots x array block)
    b"RNGS" | u32 len | utf-8 JSON
    b"META" | u32 len | utf-8 JSON

An array block is ``u16 len, name, u8 ndim, ndim x u32 extent, raw f64``.
"""
from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import AdamState

MAGIC = b"UDAD"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    optimizers: dict[str, AdamState] = field(default_factory=dict)
    rng: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _write_str(buf, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<H", len(b)))
    buf.write(b)


def _write_array(buf, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype="<f8")
    _write_str(buf, name)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes(order="C"))


def _write_json(buf, obj) -> None:
    b = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(b"MODL")
    buf.write(struct.pack("<I", len(ckpt.arrays)))
    for name in sorted(ckpt.arrays):
        _write_array(buf, name, ckpt.arrays[name])
    buf.write(b"OPTM")
    buf.write(struct.pack("<I", len(ckpt.optimizers)))
    for name in sorted(ckpt.optimizers):
        st = ckpt.optimizers[name]
        _write_str(buf, name)
        buf.write(struct.pack("<Q4dI", st.step, st.lr, st.beta1, st.beta2, st.eps, len(st.m)))
        for i, (m, v) in enumerate(zip(st.m, st.v)):
            _write_array(buf, f"m{i}", m)
            _write_array(buf, f"v{i}", v)
    buf.write(b"RNGS")
    _write_json(buf, ckpt.rng)
    buf.write(b"META")
    _write_json(buf, ckpt.meta)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def tag(self, expected: bytes) -> None:
        got = self.take(4)
        if got != expected:
            raise CheckpointError(f"expected section {expected!r}, found {got!r}")

    def array(self) -> tuple[str, np.ndarray]:
        name = self.string()
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        return name, arr

    def json(self):
        (n,) = self.unpack("<I")
        return json.loads(self.take(n).decode("utf-8"))


def loads(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    ckpt = Checkpoint()
    r.tag(b"MODL")
    (n,) = r.unpack("<I")
    for _ in range(n):
        name, arr = r.array()
        ckpt.arrays[name] = arr
    r.tag(b"OPTM")
    (n,) = r.unpack("<I")
    for _ in range(n):
        name = r.string()
        step, lr, b1, b2, eps, slots = r.unpack("<Q4dI")
        ms, vs = [], []
        for _ in range(slots):
            ms.append(r.array()[1].copy())
            vs.append(r.array()[1].copy())
        ckpt.optimizers[name] = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=step, m=ms, v=vs)
    r.tag(b"RNGS")
    ckpt.rng = r.json()
    r.tag(b"META")
    ckpt.meta = r.json()
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint")
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: a failed write never leaves a partial file at ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(dumps(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())
