"""Frame-by-frame propagation of per-cell candidate masks toward a reference.

Each target cell starts as a singleton candidate set in its own frame. The
set is pushed one frame at a time through a windowed, row-normalized
affinity: candidate mass above the binarization threshold survives, and an
empty outcome falls back to the single strongest cell so masks never die
out. The final candidate sets over the reference frame form the rows of the
dense tracking relation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import sparse

from .correspondence import AffinityMatrix, windowed_affinity_csr
from .errors import DimensionError, InvalidInputError
from .features import FeatureGrid
from .masks import TrackMask

DEFAULT_RADIUS = 9
DEFAULT_BINARIZE_THRESHOLD = 0.2


@dataclass(frozen=True)
class DenseParams:
    """Propagation hyperparameters; defaults follow the working configuration."""

    radius: int = DEFAULT_RADIUS
    binarize_threshold: float = DEFAULT_BINARIZE_THRESHOLD
    temperature: float = 1.0


@dataclass
class DenseState:
    """Candidate bitset of one origin cell while traveling toward the reference."""

    origin_cell: int
    current_frame: int
    ref_frame: int
    candidates: np.ndarray
    params: DenseParams

    @property
    def direction(self) -> int:
        if self.ref_frame == self.current_frame:
            return 0
        return 1 if self.ref_frame > self.current_frame else -1

    @property
    def done(self) -> bool:
        return self.current_frame == self.ref_frame


def init_state(
    i0: int, t: int, t_r: int, n_cells: int, params: DenseParams = DenseParams()
) -> DenseState:
    """Singleton candidate set at the origin cell."""
    if not 0 <= i0 < n_cells:
        raise IndexError(f"origin cell {i0} out of range for {n_cells} cells")
    candidates = np.zeros(n_cells, dtype=bool)
    candidates[i0] = True
    return DenseState(origin_cell=i0, current_frame=t, ref_frame=t_r, candidates=candidates, params=params)


def _binarize_mass(mass: np.ndarray, threshold: float) -> np.ndarray:
    """Candidates with mass strictly above the threshold; argmax fallback when none."""
    out = mass > threshold
    if not out.any():
        out[int(np.argmax(mass))] = True
    return out


def propagate_step(state: DenseState, windowed_aff: AffinityMatrix | sparse.csr_matrix) -> DenseState:
    """Advance one frame: sum candidate rows of the affinity, binarize, step the index."""
    values = windowed_aff.values if isinstance(windowed_aff, AffinityMatrix) else windowed_aff
    n = state.candidates.size
    if values.shape != (n, n):
        raise DimensionError(f"affinity {values.shape} does not fit {n} cells")
    weights = state.candidates.astype(np.float64)
    if sparse.issparse(values):
        mass = np.asarray(weights @ values).ravel()
    else:
        mass = weights @ values.astype(np.float64)
    return replace(
        state,
        candidates=_binarize_mass(mass, state.params.binarize_threshold),
        current_frame=state.current_frame + state.direction,
    )


def _binarize_rows_csr(mass: sparse.csr_matrix, threshold: float) -> sparse.csr_matrix:
    """Per-row strict threshold on a CSR matrix with argmax fallback for empty rows.

    Stored values are strictly positive products of affinities, so the row
    maximum is always a stored entry and ties resolve to the lowest column
    because indices are sorted.
    """
    n_rows = mass.shape[0]
    mass.sort_indices()
    data = mass.data
    indptr = mass.indptr
    keep = data > threshold
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    survivors = np.bincount(rows[keep], minlength=n_rows)
    out_rows = [rows[keep]]
    out_cols = [mass.indices[keep]]

    needy = np.flatnonzero(survivors == 0)
    if needy.size:
        if (np.diff(indptr)[needy] == 0).any():
            raise InvalidInputError("a candidate row lost all affinity support")
        # vectorized per-row argmax: first position matching the row maximum,
        # which is the lowest column because indices are sorted
        row_max = np.maximum.reduceat(data, indptr[:-1])
        hits = np.where(data == row_max[rows], np.arange(data.size), data.size)
        first_hit = np.minimum.reduceat(hits, indptr[:-1])
        out_rows.append(needy)
        out_cols.append(mass.indices[first_hit[needy]])

    all_rows = np.concatenate(out_rows)
    all_cols = np.concatenate(out_cols)
    out = sparse.csr_matrix(
        (np.ones(all_rows.size, dtype=np.float64), (all_rows, all_cols)), shape=mass.shape
    )
    out.sort_indices()
    return out


def build_dense_mask(
    grids: Sequence[FeatureGrid],
    params: DenseParams = DenseParams(),
    frame_indices: Sequence[int] | None = None,
    pair_affinities: Sequence[sparse.csr_matrix] | None = None,
) -> TrackMask:
    """Propagate every origin cell through the grid chain at once.

    ``grids`` runs from the target frame to the reference frame inclusive.
    ``frame_indices``, when given, must be contiguous (step +1 or -1); a gap
    raises :class:`InvalidInputError`. ``pair_affinities`` optionally
    supplies precomputed windowed affinities for each adjacent pair, shared
    across target frames by the pipeline.
    """
    if not grids:
        raise InvalidInputError("need at least the target frame's grid")
    shape = grids[0].data.shape
    for g in grids[1:]:
        if g.data.shape != shape:
            raise DimensionError("all grids in the chain must share dimensions")
    if frame_indices is not None:
        if len(frame_indices) != len(grids):
            raise InvalidInputError("frame_indices must cover every grid in the chain")
        steps = np.diff(frame_indices)
        if steps.size and ((np.abs(steps) != 1).any() or np.unique(np.sign(steps)).size > 1):
            raise InvalidInputError(f"frame coverage has gaps: {list(frame_indices)}")
    if pair_affinities is not None and len(pair_affinities) != len(grids) - 1:
        raise InvalidInputError("need one pair affinity per adjacent grid pair")

    n = grids[0].n_cells
    current = sparse.identity(n, dtype=np.float64, format="csr")
    for k in range(len(grids) - 1):
        if pair_affinities is not None:
            aff = pair_affinities[k]
        else:
            aff = windowed_affinity_csr(grids[k], grids[k + 1], params.radius, params.temperature)
        mass = current @ aff
        current = _binarize_rows_csr(mass, params.binarize_threshold)
    bits = np.asarray(current.todense(), dtype=bool)
    return TrackMask(bits=bits, origin="dense")
