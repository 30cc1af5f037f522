"""STCF binary writer.

Layout (little-endian): magic ``STCF``, u32 version = 1, u32 T, u32 grid_h,
u32 grid_w, u32 L, then T * grid_h * grid_w * L float32 values in
(t, row, col, channel) order, no compression.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"STCF"
VERSION = 1


def write_stcf(path: str | Path, tensor: np.ndarray) -> Path:
    tensor = np.ascontiguousarray(tensor, dtype=np.float32)
    if tensor.ndim != 4:
        raise ValueError(f"expected a (T, grid_h, grid_w, L) tensor, got shape {tensor.shape}")
    t, gh, gw, ch = tensor.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<5I", VERSION, t, gh, gw, ch))
        fh.write(tensor.astype("<f4").tobytes())
    return path
