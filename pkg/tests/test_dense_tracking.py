import numpy as np
import pytest

from chromaflow.correspondence import AffinityMatrix, windowed_affinity, windowed_affinity_csr
from chromaflow.dense_tracking import (
    DenseParams,
    build_dense_mask,
    init_state,
    propagate_step,
)
from chromaflow.errors import DimensionError, InvalidInputError
from chromaflow.features import FeatureGrid

from oracles import oracle_dense_mask


def _grid(data: np.ndarray) -> FeatureGrid:
    return FeatureGrid(data=data.astype(np.float32), stride=1)


def _one_hot_grid(gh: int, gw: int) -> FeatureGrid:
    """Distinct per-cell features: identity basis vectors."""
    n = gh * gw
    return _grid(np.eye(n).reshape(gh, gw, n))


def test_init_state_singleton():
    state = init_state(5, t=2, t_r=6, n_cells=16)
    assert state.candidates.sum() == 1
    assert state.candidates[5]
    assert state.direction == 1


def test_init_state_terminal():
    state = init_state(5, t=4, t_r=4, n_cells=16)
    assert state.done
    assert state.candidates[5] and state.candidates.sum() == 1


def test_init_state_backward_direction():
    assert init_state(0, t=9, t_r=2, n_cells=4).direction == -1


def test_init_state_boundary_cell():
    state = init_state(15, t=1, t_r=2, n_cells=16)
    assert state.candidates[15]


def test_init_state_out_of_range():
    with pytest.raises(IndexError):
        init_state(16, t=1, t_r=2, n_cells=16)


def test_propagate_identity_keeps_candidates():
    n = 9
    state = init_state(4, t=1, t_r=3, n_cells=n)
    identity = AffinityMatrix(values=np.eye(n, dtype=np.float32))
    stepped = propagate_step(state, identity)
    assert np.array_equal(stepped.candidates, state.candidates)
    assert stepped.current_frame == 2


def test_propagate_uniform_window_falls_back_to_argmax():
    # uniform row over a full 18x18 window: 324 cells at mass 1/324 < 0.2,
    # so the threshold empties the set and the lowest-index argmax survives
    n = 324
    state = init_state(100, t=1, t_r=2, n_cells=n, params=DenseParams(binarize_threshold=0.2))
    uniform = AffinityMatrix(values=np.full((n, n), 1.0 / n, dtype=np.float32))
    stepped = propagate_step(state, uniform)
    assert np.flatnonzero(stepped.candidates).tolist() == [0]


def test_propagate_translation_follows_shift():
    gh = gw = 8
    n = gh * gw
    base = _one_hot_grid(gh, gw)
    shifted = _grid(np.roll(base.data, 1, axis=1))  # content moves one cell right
    i0 = 3 * gw + 4
    state = init_state(i0, t=1, t_r=2, n_cells=n)
    win = windowed_affinity(base, shifted, radius=2, temperature=1.0)
    stepped = propagate_step(state, win)
    assert np.flatnonzero(stepped.candidates).tolist() == [i0 + 1]


def test_propagate_dim_mismatch():
    state = init_state(0, t=1, t_r=2, n_cells=4)
    with pytest.raises(DimensionError):
        propagate_step(state, AffinityMatrix(values=np.eye(5, dtype=np.float32)))


def test_dense_mask_terminal_is_identity():
    grid = _one_hot_grid(3, 3)
    mask = build_dense_mask([grid], DenseParams())
    assert np.array_equal(mask.bits, np.eye(9, dtype=bool))


def test_dense_mask_static_contains_identity():
    # self-similarity dominates each window, so every cell keeps itself
    rng = np.random.default_rng(0)
    grid = _grid(rng.normal(size=(6, 6, 10)))
    mask = build_dense_mask([grid] * 4, DenseParams(radius=3))
    assert mask.bits[np.diag_indices(36)].all()


def test_dense_mask_rows_never_empty():
    rng = np.random.default_rng(1)
    grids = [_grid(rng.normal(size=(5, 5, 6))) for _ in range(4)]
    mask = build_dense_mask(grids, DenseParams(radius=2, binarize_threshold=0.9))
    assert mask.bits.any(axis=1).all()


def test_dense_mask_matches_bruteforce():
    rng = np.random.default_rng(2)
    for trial in range(3):
        gh, gw = 4, 5
        frames = int(rng.integers(2, 5))
        grids = [_grid(rng.normal(size=(gh, gw, 6))) for _ in range(frames)]
        params = DenseParams(radius=2, binarize_threshold=0.2, temperature=0.5)
        ours = build_dense_mask(grids, params)
        expected = oracle_dense_mask(
            [g.flat() for g in grids], gh, gw, params.radius, params.binarize_threshold, params.temperature
        )
        assert np.array_equal(ours.bits, expected)


def test_dense_mask_locality_bound():
    rng = np.random.default_rng(3)
    gh = gw = 8
    grids = [_grid(rng.normal(size=(gh, gw, 5))) for _ in range(3)]
    radius = 2
    mask = build_dense_mask(grids, DenseParams(radius=radius, binarize_threshold=0.01))
    steps = len(grids) - 1
    for i, j in zip(*np.nonzero(mask.bits)):
        yi, xi = divmod(int(i), gw)
        yj, xj = divmod(int(j), gw)
        assert max(abs(yi - yj), abs(xi - xj)) <= steps * radius


def test_dense_mask_shared_affinities_match_recomputed():
    rng = np.random.default_rng(4)
    grids = [_grid(rng.normal(size=(5, 5, 6))) for _ in range(4)]
    params = DenseParams(radius=2, binarize_threshold=0.2)
    pairs = [
        windowed_affinity_csr(grids[k], grids[k + 1], params.radius, params.temperature)
        for k in range(3)
    ]
    cached = build_dense_mask(grids, params, pair_affinities=pairs)
    recomputed = build_dense_mask(grids, params)
    assert np.array_equal(cached.bits, recomputed.bits)


def test_dense_mask_gap_detection():
    rng = np.random.default_rng(5)
    grids = [_grid(rng.normal(size=(4, 4, 4))) for _ in range(3)]
    with pytest.raises(InvalidInputError):
        build_dense_mask(grids, DenseParams(), frame_indices=[1, 3, 4])
    with pytest.raises(InvalidInputError):
        build_dense_mask(grids, DenseParams(), frame_indices=[1, 2])


def test_dense_mask_dim_mismatch():
    rng = np.random.default_rng(6)
    grids = [_grid(rng.normal(size=(4, 4, 4))), _grid(rng.normal(size=(4, 5, 4)))]
    with pytest.raises(DimensionError):
        build_dense_mask(grids, DenseParams())


def test_propagate_chain_equals_batch():
    rng = np.random.default_rng(7)
    gh, gw = 4, 4
    n = gh * gw
    grids = [_grid(rng.normal(size=(gh, gw, 5))) for _ in range(4)]
    params = DenseParams(radius=2, binarize_threshold=0.15, temperature=0.7)
    batch = build_dense_mask(grids, params)
    for origin in range(n):
        state = init_state(origin, t=1, t_r=4, n_cells=n, params=params)
        for k in range(3):
            win = windowed_affinity_csr(grids[k], grids[k + 1], params.radius, params.temperature)
            state = propagate_step(state, win)
        assert np.array_equal(state.candidates, batch.bits[origin])
