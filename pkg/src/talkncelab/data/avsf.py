"""AVSF array container.

Layout (all integers little-endian unsigned 32-bit)::

    b"AVSF" | version | rank | dim_0 ... dim_{rank-1} | float32 LE payload (row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AVSF"
VERSION = 1


class AVSFError(ValueError):
    pass


class UnsupportedVersionError(AVSFError):
    pass


def encode(arr) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = MAGIC + struct.pack(f"<II{arr.ndim}I", VERSION, arr.ndim, *arr.shape)
    return header + arr.tobytes(order="C")


def decode(buf: bytes, name: str = "<buffer>") -> np.ndarray:
    if len(buf) < 12:
        raise AVSFError(f"{name}: truncated header ({len(buf)} bytes, need at least 12)")
    if buf[:4] != MAGIC:
        raise AVSFError(f"{name}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"{name}: unsupported AVSF version {version} (supported: {VERSION})")
    head = 12 + 4 * rank
    if len(buf) < head:
        raise AVSFError(f"{name}: truncated header, expected {head} bytes, got {len(buf)}")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    expected = head + 4 * int(np.prod(dims, dtype=np.int64))
    if len(buf) != expected:
        kind = "truncated" if len(buf) < expected else "oversized"
        raise AVSFError(f"{name}: {kind} file, expected {expected} bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype="<f4", offset=head).reshape(dims).astype(np.float32)


def write_array(path, arr) -> None:
    Path(path).write_bytes(encode(arr))


def read_array(path) -> np.ndarray:
    path = Path(path)
    return decode(path.read_bytes(), name=str(path))
