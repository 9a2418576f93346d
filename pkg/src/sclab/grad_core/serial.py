"""Binary tensor records.

Layout (little-endian): ``b"SCLT"``, format version ``u32``, rank ``u32``,
one ``u32`` per dimension, then the row-major ``f64`` payload.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"SCLT"
FORMAT_VERSION = 1


class SerializationError(ValueError):
    pass


def tensor_to_bytes(x) -> bytes:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    head = MAGIC + struct.pack("<II", FORMAT_VERSION, data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape)
    return head + np.ascontiguousarray(data, dtype="<f8").tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one record starting at ``offset``; returns the array and the offset just past it."""
    if buf[offset: offset + 4] != MAGIC:
        raise SerializationError(f"bad tensor magic at byte {offset}")
    if len(buf) < offset + 12:
        raise SerializationError("truncated tensor header")
    version, rank = struct.unpack_from("<II", buf, offset + 4)
    if version > FORMAT_VERSION:
        raise SerializationError(f"unsupported tensor format version {version} (this build reads <= {FORMAT_VERSION})")
    pos = offset + 12
    if len(buf) < pos + 4 * rank:
        raise SerializationError("truncated tensor dimensions")
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    nbytes = 8 * int(np.prod(dims, dtype=np.int64))
    if len(buf) < pos + nbytes:
        raise SerializationError("truncated tensor payload")
    arr = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).astype(np.float64).reshape(dims)
    return arr, pos + nbytes
