"""Warp reference chrominance onto target cells through attention weights.

Each target cell's color is a convex combination of reference cell colors
weighted by a (possibly restricted) row-stochastic affinity. The confidence
map keeps the maximum weight of each row, damped for rows that fell back to
the unrestricted affinity. Warping runs at grid resolution; a bilinear
upsampling step reconstructs full-resolution chrominance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .correspondence import AffinityMatrix
from .errors import DimensionError, InvalidInputError

DEFAULT_FALLBACK_CONFIDENCE_FACTOR = 0.5

_MATMUL_BLOCK_ROWS = 1024


def _weighted_sum(weights: np.ndarray, flat_ab: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Accumulate ``weights @ flat_ab`` in float64 with bounded temporaries."""
    for start in range(0, weights.shape[0], _MATMUL_BLOCK_ROWS):
        stop = start + _MATMUL_BLOCK_ROWS
        out[start:stop] += weights[start:stop].astype(np.float64) @ flat_ab
    return out


@dataclass
class WarpResult:
    """Warped chrominance and confidence at grid resolution.

    ``ab`` is (grid_h, grid_w, 2); ``confidence`` is (grid_h, grid_w) in
    [0, 1]; ``fallback`` marks cells whose restriction mask was empty.
    ``ab_full``/``confidence_full`` appear after upsampling.
    """

    ab: np.ndarray
    confidence: np.ndarray
    fallback: np.ndarray
    ab_full: Optional[np.ndarray] = None
    confidence_full: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        # float64: the warp is the accuracy-critical step and must match
        # reference computations elementwise to 1e-6 even for ab near 128
        self.ab = np.asarray(self.ab, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float32)
        self.fallback = np.asarray(self.fallback, dtype=bool)
        if self.ab.ndim != 3 or self.ab.shape[2] != 2:
            raise DimensionError(f"warped ab must be (grid_h, grid_w, 2), got {self.ab.shape}")
        if self.confidence.shape != self.ab.shape[:2] or self.fallback.shape != self.ab.shape[:2]:
            raise DimensionError("confidence/fallback shape must match the warped grid")

    @property
    def grid_h(self) -> int:
        return self.ab.shape[0]

    @property
    def grid_w(self) -> int:
        return self.ab.shape[1]


def _ref_ab_flat(ref_ab: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    ref_ab = np.asarray(ref_ab, dtype=np.float64)
    if ref_ab.ndim != 3 or ref_ab.shape[2] != 2:
        raise DimensionError(f"reference ab must be (grid_h, grid_w, 2), got {ref_ab.shape}")
    return ref_ab.reshape(-1, 2), ref_ab.shape[:2]


def warp_single(
    aff: AffinityMatrix,
    ref_ab: np.ndarray,
    fallback_flags: Optional[np.ndarray] = None,
    target_shape: Optional[tuple[int, int]] = None,
    fallback_factor: float = DEFAULT_FALLBACK_CONFIDENCE_FACTOR,
) -> WarpResult:
    """Weighted sum of one reference's chrominance per target cell."""
    if aff.normalization != "per-row":
        raise InvalidInputError("warp_single takes a per-row affinity; use warp_multi for stacks")
    flat, ref_shape = _ref_ab_flat(ref_ab)
    if aff.n_ref != flat.shape[0]:
        raise DimensionError(f"affinity has {aff.n_ref} reference cells, ab grid has {flat.shape[0]}")
    shape = target_shape if target_shape is not None else ref_shape
    if aff.n_target != shape[0] * shape[1]:
        raise DimensionError(f"affinity has {aff.n_target} target cells, grid shape is {shape}")

    warped = _weighted_sum(aff.values, flat, np.zeros((aff.n_target, 2))).reshape(shape + (2,))
    confidence = aff.values.max(axis=1).reshape(shape).astype(np.float32)
    if fallback_flags is None:
        fallback = np.zeros(shape, dtype=bool)
    else:
        fallback = np.asarray(fallback_flags, dtype=bool).reshape(shape)
        confidence = np.where(fallback, confidence * np.float32(fallback_factor), confidence)
    return WarpResult(ab=warped, confidence=confidence, fallback=fallback)


def warp_multi(
    aff: AffinityMatrix,
    refs_ab: Sequence[np.ndarray],
    fallback_flags: Optional[np.ndarray] = None,
    target_shape: Optional[tuple[int, int]] = None,
    fallback_factor: float = DEFAULT_FALLBACK_CONFIDENCE_FACTOR,
) -> WarpResult:
    """Weighted sum across a stack of references under a per-stack affinity."""
    if aff.normalization != "per-stack":
        raise InvalidInputError("warp_multi takes a per-stack affinity")
    if len(refs_ab) != aff.n_refs:
        raise DimensionError(f"affinity stacks {aff.n_refs} references, got {len(refs_ab)} ab grids")
    flats = []
    ref_shape = None
    for ref_ab in refs_ab:
        flat, shape = _ref_ab_flat(ref_ab)
        if ref_shape is None:
            ref_shape = shape
        elif shape != ref_shape:
            raise DimensionError("all reference ab grids must share dimensions")
        if aff.n_ref != flat.shape[0]:
            raise DimensionError(f"affinity has {aff.n_ref} reference cells, ab grid has {flat.shape[0]}")
        flats.append(flat)
    shape = target_shape if target_shape is not None else ref_shape
    if aff.n_target != shape[0] * shape[1]:
        raise DimensionError(f"affinity has {aff.n_target} target cells, grid shape is {shape}")

    warped = np.zeros((aff.n_target, 2), dtype=np.float64)
    for r, flat in enumerate(flats):
        _weighted_sum(aff.values[r], flat, warped)
    confidence = aff.values.max(axis=(0, 2)).reshape(shape).astype(np.float32)
    if fallback_flags is None:
        fallback = np.zeros(shape, dtype=bool)
    else:
        fallback = np.asarray(fallback_flags, dtype=bool).reshape(shape)
        confidence = np.where(fallback, confidence * np.float32(fallback_factor), confidence)
    return WarpResult(ab=warped.reshape(shape + (2,)), confidence=confidence, fallback=fallback)


def bilinear_upsample(grid: np.ndarray, full_dims: tuple[int, int], stride: int) -> np.ndarray:
    """Upsample a (grid_h, grid_w[, C]) array to (H, W[, C]).

    Output pixel p samples grid coordinate (p + 0.5) / stride - 0.5, clamped
    to the grid, so stride 1 is the identity and cell centers land on their
    own values.
    """
    h, w = full_dims
    gh, gw = grid.shape[:2]
    if gh != -(-h // stride) or gw != -(-w // stride):
        raise DimensionError(
            f"grid {gw}x{gh} is inconsistent with {w}x{h} at stride {stride}"
        )
    gy = np.clip((np.arange(h) + 0.5) / stride - 0.5, 0.0, gh - 1.0)
    gx = np.clip((np.arange(w) + 0.5) / stride - 0.5, 0.0, gw - 1.0)
    y0 = np.floor(gy).astype(np.int64)
    x0 = np.floor(gx).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    wy = (gy - y0).astype(np.float64)
    wx = (gx - x0).astype(np.float64)

    flat = grid.reshape(gh, gw, -1).astype(np.float64)
    top = flat[y0][:, x0] * (1 - wx)[None, :, None] + flat[y0][:, x1] * wx[None, :, None]
    bot = flat[y1][:, x0] * (1 - wx)[None, :, None] + flat[y1][:, x1] * wx[None, :, None]
    out = top * (1 - wy)[:, None, None] + bot * wy[:, None, None]
    out = out.reshape((h, w) + grid.shape[2:])
    return out.astype(np.float32)


def upsample_ab(warp: WarpResult, full_dims: tuple[int, int], stride: int) -> WarpResult:
    """Fill ``ab_full`` and ``confidence_full`` by bilinear upsampling."""
    warp.ab_full = bilinear_upsample(warp.ab, full_dims, stride)
    warp.confidence_full = bilinear_upsample(warp.confidence, full_dims, stride)
    return warp
