"""PCAK tensor container.

Layout: magic ``PCAK``, u32 version (1), u8 rank, ``rank`` x u32 dims, then
the values as row-major little-endian float32.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, MissingAssetError

MAGIC = b"PCAK"
VERSION = 1
_F32 = np.dtype("<f4")


def encode(array) -> bytes:
    a = np.asarray(array)
    if a.ndim > 255:
        raise InvalidInputError("rank too large for PCAK")
    head = MAGIC + struct.pack("<IB", VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype=_F32).tobytes()


def decode(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; return it and the end offset."""
    if buf[offset:offset + 4] != MAGIC:
        raise InvalidInputError("not a PCAK tensor (bad magic)")
    version, rank = struct.unpack_from("<IB", buf, offset + 4)
    if version != VERSION:
        raise InvalidInputError(f"unsupported PCAK version {version}")
    pos = offset + 9
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    end = pos + 4 * count
    if end > len(buf):
        raise InvalidInputError("truncated PCAK payload")
    data = np.frombuffer(buf, dtype=_F32, count=count, offset=pos).reshape(dims)
    return data.astype(np.float32), end


def save(path: str | os.PathLike, array) -> None:
    Path(path).write_bytes(encode(array))


def load(path: str | os.PathLike) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise MissingAssetError(f"tensor file not found: {p}")
    array, end = decode(p.read_bytes())
    return array
