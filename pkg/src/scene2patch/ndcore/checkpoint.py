"""Self-describing little-endian parameter container.

Layout::

    magic    8 bytes  b"S2PCKPT\\0"
    version  u32
    config   u32 length + UTF-8 model configuration identifier
    meta     u32 length + UTF-8 JSON object (may be "{}")
    count    u32
    count x [ u32 name length, UTF-8 name, u32 ndim, ndim x u32 dims,
              prod(dims) x f64 row-major payload ]
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

MAGIC = b"S2PCKPT\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_id: str
    arrays: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _put_str(buf: io.BytesIO, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def encode_checkpoint(config_id: str, arrays: Mapping[str, np.ndarray], metadata: Mapping | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    _put_str(buf, config_id)
    _put_str(buf, json.dumps(dict(metadata or {}), sort_keys=True))
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        _put_str(buf, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def decode_checkpoint(raw: bytes) -> Checkpoint:
    view = memoryview(raw)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    def u32() -> int:
        return struct.unpack("<I", take(4))[0]

    def text() -> str:
        return bytes(take(u32())).decode("utf-8")

    if bytes(take(len(MAGIC))) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_id = text()
    metadata = json.loads(text())
    arrays: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        name = text()
        ndim = u32()
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(bytes(take(8 * count)), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(config_id, arrays, metadata, version)


def write_checkpoint(path, config_id: str, arrays: Mapping[str, np.ndarray], metadata: Mapping | None = None) -> None:
    payload = encode_checkpoint(config_id, arrays, metadata)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
