"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"ODSC"  u32 version
    u16 len + utf-8 config hash
    u16 len + utf-8 stage
    u64 epoch
    u64 adam step, 4 x f64 (lr, beta1, beta2, eps)
    u32 array count, then per array:
        u16 len + utf-8 name, u8 ndim, ndim x u64 dims, f64 data (C order)

Arrays are named ``param/<name>``, ``adam.m/<name>`` and ``adam.v/<name>``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .optim import AdamState

MAGIC = b"ODSC"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    config_hash: str = ""
    stage: str = "init"


def _put_str(buf: list, s: str) -> None:
    b = s.encode("utf-8")
    buf.append(struct.pack("<H", len(b)))
    buf.append(b)


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf: list[bytes] = [MAGIC, struct.pack("<I", VERSION)]
    _put_str(buf, ckpt.config_hash)
    _put_str(buf, ckpt.stage)
    a = ckpt.adam
    buf.append(struct.pack("<QQdddd", ckpt.epoch, a.t, a.lr, a.beta1, a.beta2, a.eps))
    arrays = [(f"param/{k}", v) for k, v in sorted(ckpt.params.items())]
    arrays += [(f"adam.m/{k}", v) for k, v in sorted(a.m.items())]
    arrays += [(f"adam.v/{k}", v) for k, v in sorted(a.v.items())]
    buf.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        _put_str(buf, name)
        buf.append(struct.pack("<B", arr.ndim))
        buf.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.append(arr.tobytes())
    return b"".join(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise DataError("not an ODSC checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    config_hash = r.string()
    stage = r.string()
    epoch, t, lr, b1, b2, eps = r.unpack("<QQdddd")
    adam = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, t=t)
    params: dict[str, np.ndarray] = {}
    (count,) = r.unpack("<I")
    for _ in range(count):
        name = r.string()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        kind, _, key = name.partition("/")
        target = {"param": params, "adam.m": adam.m, "adam.v": adam.v}.get(kind)
        if target is None:
            raise DataError(f"unknown array kind in checkpoint: {name!r}")
        target[key] = arr
    if r.pos != len(data):
        raise DataError("trailing bytes after checkpoint payload")
    return Checkpoint(params=params, adam=adam, epoch=epoch, config_hash=config_hash, stage=stage)


def save(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())
