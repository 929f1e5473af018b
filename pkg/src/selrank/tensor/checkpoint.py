"""Binary checkpoint container.

Layout (all integers little-endian uint32)::

    b"SELQAMDL" | version | meta_len | meta (UTF-8 JSON) | n_arrays |
    n_arrays x (name_len | name (UTF-8) | rank | dims... | float32 LE data)
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import DataError

MAGIC = b"SELQAMDL"
VERSION = 1


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> None:
    parts = [MAGIC, _u32(VERSION)]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts += [_u32(len(meta_bytes)), meta_bytes, _u32(len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts += [_u32(len(encoded)), encoded, _u32(arr.ndim)]
        parts += [_u32(d) for d in arr.shape]
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError(f"{self.source}: truncated checkpoint at byte {self.pos}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    r = _Reader(Path(path).read_bytes(), str(path))
    if r.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise DataError(f"{path}: checkpoint version {version} unsupported (expected {VERSION})")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    return arrays, meta
