"""Flat little-endian binary format for named float64 arrays.

Layout per array: ``uint32 ndim``, ``ndim x uint32`` dimensions, then the
row-major ``float64`` values. Arrays are written back to back in the
order given; names and order live in the accompanying manifest.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterable

import numpy as np


def write_arrays(fh: BinaryIO, arrays: Iterable[np.ndarray]) -> None:
    for arr in arrays:
        arr = np.asarray(arr, dtype="<f8")
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_arrays(fh: BinaryIO) -> list[np.ndarray]:
    out = []
    while True:
        head = fh.read(4)
        if not head:
            return out
        if len(head) != 4:
            raise ValueError("truncated array header")
        (ndim,) = struct.unpack("<I", head)
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise ValueError("truncated array payload")
        out.append(np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64))
