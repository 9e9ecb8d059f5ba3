"""Binary checkpoint archive.

Layout (all integers little-endian unsigned 64-bit)::

    b"MDNCKPT1"
    repeated: name_len, utf-8 name, rank, extents[rank], float32 data (row-major)
"""
from __future__ import annotations

import os
import struct
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"MDNCKPT1"
_U64 = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def write_records(fh: BinaryIO, arrays: Mapping[str, np.ndarray]) -> None:
    fh.write(MAGIC)
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        fh.write(_U64.pack(len(raw)))
        fh.write(raw)
        fh.write(_U64.pack(arr.ndim))
        for n in arr.shape:
            fh.write(_U64.pack(n))
        fh.write(arr.tobytes(order="C"))


def save(path, arrays: Mapping[str, np.ndarray]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        write_records(fh, arrays)
    os.replace(tmp, path)


def _read(buf: memoryview, pos: int, n: int, what: str) -> tuple:
    if pos + n > len(buf):
        raise CheckpointError(f"truncated checkpoint while reading {what} at byte {pos}")
    return bytes(buf[pos:pos + n]), pos + n


def loads(data: bytes) -> dict:
    buf = memoryview(data)
    magic, pos = _read(buf, 0, len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; expected {MAGIC!r}")
    out = {}
    while pos < len(buf):
        raw, pos = _read(buf, pos, 8, "name length")
        name_b, pos = _read(buf, pos, _U64.unpack(raw)[0], "name")
        raw, pos = _read(buf, pos, 8, "rank")
        rank = _U64.unpack(raw)[0]
        shape = []
        for _ in range(rank):
            raw, pos = _read(buf, pos, 8, "extent")
            shape.append(_U64.unpack(raw)[0])
        count = int(np.prod(shape, dtype=np.int64))
        body, pos = _read(buf, pos, 4 * count, "data")
        name = name_b.decode("utf-8")
        out[name] = np.frombuffer(body, dtype="<f4").reshape(shape).astype(np.float32)
    return out


def load(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())
