"""HMV1 parameter checkpoints.

Layout (all integers unsigned little-endian)::

    b"HMV1"
    u32 record count
    per record:
        u32 name length, name bytes (UTF-8)
        u32 axis count, u64 per axis
        float64 values, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"HMV1"


class CheckpointError(ValueError):
    pass


def encode_params(params: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.asarray(getattr(arr, "data", arr), dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_params(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * n > len(blob):
            raise CheckpointError(f"truncated values for {name!r}")
        out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes")
    return out


def save_params(params: Mapping[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_bytes(encode_params(params))


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    return decode_params(Path(path).read_bytes())
