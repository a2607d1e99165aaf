"""Flat binary tensor files for golden tests and artifact export.

Layout: magic ``ZGLA`` (4 bytes), the number of dimensions as a little-endian
u32, each dimension as a little-endian u32, then the data as little-endian
float64 in C order. The header is 16 bytes for the rank-2 case; it grows by 4
bytes per additional dimension.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import TensorFormatError

MAGIC = b"ZGLA"


def write_tensor(path: str | Path, values: np.ndarray) -> None:
    arr = np.asarray(values, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: missing {MAGIC!r} magic")
    (ndim,) = struct.unpack("<I", raw[4:8])
    header_end = 8 + 4 * ndim
    if len(raw) < header_end:
        raise TensorFormatError(f"{path}: truncated header")
    shape = struct.unpack(f"<{ndim}I", raw[8:header_end])
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    expected = header_end + 8 * count
    if len(raw) != expected:
        raise TensorFormatError(
            f"{path}: expected {expected} bytes for shape {shape}, got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f8", offset=header_end, count=count)
    return data.reshape(shape).astype(np.float64)
