"""Correlation and affinity matrices between feature grids.

The correlation is a mean-centered cosine similarity between cell features;
affinities are row softmaxes of correlations, optionally restricted by a
binary track mask or by a spatial window, and optionally stacked across
several reference frames with one joint softmax per target cell.

Matrices are stored float32; every reduction (row sums, maxima) runs in
float64 so rows stay stochastic to well below 1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import DimensionError, InvalidParameterError
from .features import FeatureGrid
from .masks import TrackMask


@dataclass
class CorrelationMatrix:
    """Mean-centered cosine similarities, shape (n_target, n_ref), values in [-1, 1]."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise DimensionError(f"correlation must be 2-D, got {self.values.shape}")

    @property
    def n_target(self) -> int:
        return self.values.shape[0]

    @property
    def n_ref(self) -> int:
        return self.values.shape[1]


@dataclass
class StackedCorrelation:
    """Per-reference correlation matrices sharing the same shape."""

    matrices: list[CorrelationMatrix]

    def __post_init__(self) -> None:
        if not self.matrices:
            raise InvalidParameterError("a stack needs at least one correlation matrix")
        shape = self.matrices[0].values.shape
        for m in self.matrices[1:]:
            if m.values.shape != shape:
                raise DimensionError("all stacked correlation matrices must share one shape")

    @property
    def n_refs(self) -> int:
        return len(self.matrices)


@dataclass
class AffinityMatrix:
    """Non-negative attention weights.

    ``normalization`` is "per-row" for a 2-D matrix whose rows sum to 1, or
    "per-stack" for a 3-D (n_refs, n_target, n_ref) tensor where, for each
    target row i, the entries over all (ref, j) sum to 1.
    """

    values: np.ndarray
    normalization: str = "per-row"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.normalization == "per-row":
            if self.values.ndim != 2:
                raise DimensionError("per-row affinity must be 2-D")
        elif self.normalization == "per-stack":
            if self.values.ndim != 3:
                raise DimensionError("per-stack affinity must be 3-D")
        else:
            raise InvalidParameterError(f"unknown normalization {self.normalization!r}")

    @property
    def n_target(self) -> int:
        return self.values.shape[-2]

    @property
    def n_ref(self) -> int:
        return self.values.shape[-1]

    @property
    def n_refs(self) -> int:
        return 1 if self.values.ndim == 2 else self.values.shape[0]


def _centered_unit_features(grid: FeatureGrid) -> np.ndarray:
    """Mean-center cell features and scale to unit norm; zero-norm cells stay zero."""
    flat = grid.flat().astype(np.float64)
    centered = flat - flat.mean(axis=0)
    norms = np.linalg.norm(centered, axis=1, keepdims=True)
    return np.divide(centered, norms, out=np.zeros_like(centered), where=norms > 0)


_MATMUL_BLOCK_ROWS = 512


def correlation(target: FeatureGrid, reference: FeatureGrid) -> CorrelationMatrix:
    """Mean-centered cosine correlation between all target and reference cells."""
    if target.data.shape != reference.data.shape:
        raise DimensionError(
            f"grids differ: {target.data.shape} vs {reference.data.shape}"
        )
    nt = _centered_unit_features(target)
    nr_t = _centered_unit_features(reference).T
    # row blocks keep the float64 product temporaries bounded
    values = np.empty((nt.shape[0], nr_t.shape[1]), dtype=np.float32)
    for start in range(0, nt.shape[0], _MATMUL_BLOCK_ROWS):
        stop = start + _MATMUL_BLOCK_ROWS
        values[start:stop] = np.clip(nt[start:stop] @ nr_t, -1.0, 1.0)
    return CorrelationMatrix(values=values)


def _softmax_rows_inplace(values: np.ndarray, temperature: float) -> np.ndarray:
    """Row softmax of a float32 matrix, stabilized and normalized in float64."""
    values -= values.max(axis=1, keepdims=True)
    values /= np.float32(temperature)
    np.exp(values, out=values)
    sums = values.sum(axis=1, dtype=np.float64)
    values /= sums[:, None]
    return values


def affinity(corr: CorrelationMatrix, temperature: float = 1.0) -> AffinityMatrix:
    """Row-stochastic affinity: softmax over reference cells of C / temperature."""
    if temperature <= 0:
        raise InvalidParameterError(f"temperature must be positive, got {temperature}")
    values = corr.values.copy()
    return AffinityMatrix(values=_softmax_rows_inplace(values, temperature), normalization="per-row")


def stacked_affinity(corrs: StackedCorrelation, temperature: float = 1.0) -> AffinityMatrix:
    """Joint softmax over all (reference, cell) pairs per target cell."""
    if temperature <= 0:
        raise InvalidParameterError(f"temperature must be positive, got {temperature}")
    stack = np.stack([m.values for m in corrs.matrices], axis=0)
    stack -= stack.max(axis=(0, 2), keepdims=True)
    stack /= np.float32(temperature)
    np.exp(stack, out=stack)
    sums = stack.sum(axis=(0, 2), dtype=np.float64)
    stack /= sums[None, :, None]
    return AffinityMatrix(values=stack, normalization="per-stack")


def _mask_stack(aff: AffinityMatrix, mask: TrackMask | Sequence[TrackMask]) -> np.ndarray:
    """Validate mask dimensions against an affinity and return bits as a matching array."""
    if aff.values.ndim == 2:
        if isinstance(mask, TrackMask):
            bits = mask.bits
        else:
            if len(mask) != 1:
                raise DimensionError("per-row affinity takes exactly one mask")
            bits = mask[0].bits
        if bits.shape != aff.values.shape:
            raise DimensionError(f"mask {bits.shape} does not fit affinity {aff.values.shape}")
        return bits
    masks = [mask] if isinstance(mask, TrackMask) else list(mask)
    if len(masks) != aff.n_refs:
        raise DimensionError(f"got {len(masks)} masks for {aff.n_refs} stacked references")
    bits = np.stack([m.bits for m in masks], axis=0)
    if bits.shape != aff.values.shape:
        raise DimensionError(f"masks {bits.shape} do not fit affinity {aff.values.shape}")
    return bits


def restrict(
    aff: AffinityMatrix, mask: TrackMask | Sequence[TrackMask]
) -> tuple[AffinityMatrix, np.ndarray]:
    """Zero the affinity outside the mask and renormalize surviving rows.

    Target rows whose mask is entirely empty keep the unrestricted row and
    are flagged; the returned boolean vector marks those fallback rows.
    Rows whose surviving weight underflows to zero become uniform over the
    mask support.
    """
    bits = _mask_stack(aff, mask)
    values = aff.values * bits
    if aff.values.ndim == 2:
        row_bits = bits.any(axis=1)
        sums = values.sum(axis=1, dtype=np.float64)
        flags = ~row_bits
        dead = row_bits & (sums <= 0.0)
        safe = np.where(sums > 0.0, sums, 1.0)
        values /= safe[:, None]
        if flags.any():
            values[flags] = aff.values[flags]
        if dead.any():
            support = bits[dead].astype(np.float32)
            values[dead] = support / support.sum(axis=1, keepdims=True)
    else:
        row_bits = bits.any(axis=(0, 2))
        sums = values.sum(axis=(0, 2), dtype=np.float64)
        flags = ~row_bits
        dead = row_bits & (sums <= 0.0)
        safe = np.where(sums > 0.0, sums, 1.0)
        values /= safe[None, :, None]
        if flags.any():
            values[:, flags, :] = aff.values[:, flags, :]
        if dead.any():
            support = bits[:, dead, :].astype(np.float32)
            values[:, dead, :] = support / support.sum(axis=(0, 2), keepdims=True)
    return AffinityMatrix(values=values, normalization=aff.normalization), flags


def window_offsets(radius: int) -> np.ndarray:
    """All (dy, dx) cell offsets within Chebyshev distance < radius."""
    if radius < 1:
        raise InvalidParameterError(f"window radius must be >= 1, got {radius}")
    r = radius - 1
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return np.stack([dy.ravel(), dx.ravel()], axis=1)


def windowed_affinity_csr(
    target: FeatureGrid,
    nxt: FeatureGrid,
    radius: int,
    temperature: float = 1.0,
) -> sparse.csr_matrix:
    """Sparse windowed affinity between two same-shape grids.

    Entry (i, j) is nonzero only when cell j of the second grid lies within
    Chebyshev distance < radius of cell i's coordinates; each surviving row
    is a softmax of the windowed correlations. The 2R x 2R window of the
    warping equations is realized as this centered clipped neighborhood.
    """
    if temperature <= 0:
        raise InvalidParameterError(f"temperature must be positive, got {temperature}")
    if target.data.shape != nxt.data.shape:
        raise DimensionError(f"grids differ: {target.data.shape} vs {nxt.data.shape}")
    gh, gw = target.grid_h, target.grid_w
    n = gh * gw
    ft = _centered_unit_features(target).reshape(gh, gw, -1)
    fn = _centered_unit_features(nxt).reshape(gh, gw, -1)

    rows_parts, cols_parts, vals_parts = [], [], []
    cell_ids = np.arange(n).reshape(gh, gw)
    for dy, dx in window_offsets(radius):
        ty0, ty1 = max(0, -dy), min(gh, gh - dy)
        tx0, tx1 = max(0, -dx), min(gw, gw - dx)
        if ty0 >= ty1 or tx0 >= tx1:
            continue
        block_t = ft[ty0:ty1, tx0:tx1]
        block_n = fn[ty0 + dy : ty1 + dy, tx0 + dx : tx1 + dx]
        corr = np.clip(np.einsum("yxc,yxc->yx", block_t, block_n), -1.0, 1.0)
        rows_parts.append(cell_ids[ty0:ty1, tx0:tx1].ravel())
        cols_parts.append(cell_ids[ty0 + dy : ty1 + dy, tx0 + dx : tx1 + dx].ravel())
        vals_parts.append(corr.ravel())

    rows = np.concatenate(rows_parts)
    cols = np.concatenate(cols_parts)
    vals = np.concatenate(vals_parts)
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sort_indices()

    # Softmax per row over the stored window entries. Every row contains at
    # least the (0, 0) offset, so reduceat never sees an empty segment.
    data = mat.data
    starts = mat.indptr[:-1]
    row_max = np.maximum.reduceat(data, starts)
    row_ids = np.repeat(np.arange(n), np.diff(mat.indptr))
    data = np.exp((data - row_max[row_ids]) / temperature)
    row_sum = np.add.reduceat(data, starts)
    mat.data = data / row_sum[row_ids]
    return mat


def windowed_affinity(
    target: FeatureGrid,
    nxt: FeatureGrid,
    radius: int,
    temperature: float = 1.0,
) -> AffinityMatrix:
    """Dense windowed affinity; see :func:`windowed_affinity_csr`."""
    mat = windowed_affinity_csr(target, nxt, radius, temperature)
    return AffinityMatrix(values=mat.toarray().astype(np.float32), normalization="per-row")
