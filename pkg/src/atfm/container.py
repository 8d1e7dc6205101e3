"""Binary tensor container shared by checkpoints, cached series and exports.

Layout (little-endian)::

    b"ATFM" | u32 version=1 | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 rank | u32 extents[rank]
               | float32 values, row-major

Values are stored as float32 and widened to float64 on load.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError

MAGIC = b"ATFM"
VERSION = 1


def encode(entries: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"entry {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise DataError("not a tensor container (bad magic)")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise DataError(f"unsupported container version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            if pos + 4 * size > len(blob):
                raise DataError(f"truncated tensor container: entry {name!r} needs {4 * size} bytes")
            values = np.frombuffer(blob, dtype="<f4", count=size, offset=pos)
            pos += 4 * size
            out[name] = values.astype(np.float64).reshape(shape)
    except struct.error as exc:
        raise DataError(f"truncated tensor container: {exc}") from None
    if pos != len(blob):
        raise DataError(f"{len(blob) - pos} trailing bytes after last entry")
    return out


def save(path, entries: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(entries))


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def quantize(arr) -> np.ndarray:
    """Round-trip values through the container's float32 storage."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)
