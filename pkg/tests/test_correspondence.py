import numpy as np
import pytest

from chromaflow.correspondence import (
    AffinityMatrix,
    CorrelationMatrix,
    StackedCorrelation,
    affinity,
    correlation,
    restrict,
    stacked_affinity,
    windowed_affinity,
    windowed_affinity_csr,
)
from chromaflow.errors import DimensionError, InvalidParameterError
from chromaflow.features import FeatureGrid
from chromaflow.masks import TrackMask

from oracles import (
    oracle_correlation,
    oracle_restrict,
    oracle_softmax_rows,
    oracle_stacked_softmax,
    oracle_windowed_affinity,
)


def _grid(data: np.ndarray) -> FeatureGrid:
    return FeatureGrid(data=data.astype(np.float32), stride=1)


def _random_grid(rng, gh, gw, channels) -> FeatureGrid:
    return _grid(rng.normal(size=(gh, gw, channels)))


def test_self_correlation_diagonal_is_one():
    rng = np.random.default_rng(0)
    grid = _random_grid(rng, 3, 3, 5)
    corr = correlation(grid, grid)
    assert np.allclose(np.diag(corr.values), 1.0, atol=1e-6)


def test_orthogonal_centered_vectors():
    # two cells, mean-centered features become +/- the same vector; build a
    # reference whose centered vectors are orthogonal to the target's
    target = _grid(np.array([[[1.0, 0.0]], [[-1.0, 0.0]]]))
    reference = _grid(np.array([[[0.0, 1.0]], [[0.0, -1.0]]]))
    corr = correlation(target, reference)
    assert np.allclose(corr.values, 0.0, atol=1e-6)


def test_correlation_matches_bruteforce():
    rng = np.random.default_rng(1)
    a = _random_grid(rng, 3, 3, 4)
    b = _random_grid(rng, 3, 3, 4)
    ours = correlation(a, b).values
    expected = oracle_correlation(a.flat(), b.flat())
    assert np.abs(ours - expected).max() < 1e-6


def test_correlation_symmetry():
    rng = np.random.default_rng(2)
    a = _random_grid(rng, 2, 3, 4)
    b = _random_grid(rng, 2, 3, 4)
    ab = correlation(a, b).values
    ba = correlation(b, a).values
    assert np.abs(ab - ba.T).max() < 1e-6


def test_correlation_zero_norm_rows():
    constant = _grid(np.ones((2, 2, 3)))
    rng = np.random.default_rng(3)
    other = _random_grid(rng, 2, 2, 3)
    corr = correlation(constant, other)
    assert np.allclose(corr.values, 0.0)


def test_correlation_dim_mismatch():
    rng = np.random.default_rng(4)
    with pytest.raises(DimensionError):
        correlation(_random_grid(rng, 2, 2, 3), _random_grid(rng, 2, 3, 3))


def test_affinity_uniform_rows():
    corr = CorrelationMatrix(values=np.full((3, 5), 0.25, dtype=np.float32))
    aff = affinity(corr)
    assert np.allclose(aff.values, 1.0 / 5.0, atol=1e-7)


def test_affinity_dominant_entry():
    values = np.zeros((1, 4), dtype=np.float32)
    values[0, 2] = 50.0
    aff = affinity(CorrelationMatrix(values=values), temperature=1.0)
    assert float(aff.values[0, 2]) > 1.0 - 1e-9


def test_affinity_rows_sum_to_one():
    rng = np.random.default_rng(5)
    corr = CorrelationMatrix(values=rng.uniform(-1, 1, size=(7, 9)).astype(np.float32))
    aff = affinity(corr, temperature=0.3)
    assert np.abs(aff.values.sum(axis=1, dtype=np.float64) - 1.0).max() < 1e-6


def test_affinity_matches_bruteforce():
    rng = np.random.default_rng(6)
    corr = rng.uniform(-1, 1, size=(6, 6))
    ours = affinity(CorrelationMatrix(values=corr.astype(np.float32)), temperature=0.7)
    expected = oracle_softmax_rows(corr.astype(np.float32), 0.7)
    assert np.abs(ours.values - expected).max() < 1e-6


def test_affinity_rejects_bad_temperature():
    corr = CorrelationMatrix(values=np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(InvalidParameterError):
        affinity(corr, temperature=0.0)
    with pytest.raises(InvalidParameterError):
        affinity(corr, temperature=-1.0)


def test_stacked_single_reference_reduces_to_affinity():
    rng = np.random.default_rng(7)
    corr = rng.uniform(-1, 1, size=(4, 4)).astype(np.float32)
    plain = affinity(CorrelationMatrix(values=corr), temperature=0.5)
    stacked = stacked_affinity(
        StackedCorrelation(matrices=[CorrelationMatrix(values=corr)]), temperature=0.5
    )
    assert np.abs(stacked.values[0] - plain.values).max() < 1e-7


def test_stacked_duplicate_references_halve():
    rng = np.random.default_rng(8)
    corr = rng.uniform(-1, 1, size=(4, 4)).astype(np.float32)
    single = stacked_affinity(
        StackedCorrelation(matrices=[CorrelationMatrix(values=corr)]), temperature=1.0
    )
    double = stacked_affinity(
        StackedCorrelation(
            matrices=[CorrelationMatrix(values=corr), CorrelationMatrix(values=corr.copy())]
        ),
        temperature=1.0,
    )
    assert np.abs(double.values[0] - single.values[0] / 2.0).max() < 1e-7
    assert np.abs(double.values[1] - single.values[0] / 2.0).max() < 1e-7


def test_stacked_matches_bruteforce():
    rng = np.random.default_rng(9)
    corrs = [rng.uniform(-1, 1, size=(4, 4)) for _ in range(2)]
    ours = stacked_affinity(
        StackedCorrelation(matrices=[CorrelationMatrix(values=c.astype(np.float32)) for c in corrs]),
        temperature=0.8,
    )
    expected = oracle_stacked_softmax([c.astype(np.float32) for c in corrs], 0.8)
    assert np.abs(ours.values - expected).max() < 1e-6


def test_stacked_rejects_empty():
    with pytest.raises(InvalidParameterError):
        StackedCorrelation(matrices=[])


def test_restrict_all_ones_is_identity():
    rng = np.random.default_rng(10)
    aff = affinity(CorrelationMatrix(values=rng.uniform(-1, 1, size=(5, 5)).astype(np.float32)))
    restricted, flags = restrict(aff, TrackMask(bits=np.ones((5, 5), dtype=bool)))
    assert np.abs(restricted.values - aff.values).max() < 1e-7
    assert not flags.any()


def test_restrict_singleton_row_one_hot():
    rng = np.random.default_rng(11)
    aff = affinity(CorrelationMatrix(values=rng.uniform(-1, 1, size=(3, 4)).astype(np.float32)))
    bits = np.zeros((3, 4), dtype=bool)
    bits[:, 2] = True
    restricted, flags = restrict(aff, TrackMask(bits=bits))
    expected = np.zeros((3, 4))
    expected[:, 2] = 1.0
    assert np.abs(restricted.values - expected).max() < 1e-7
    assert not flags.any()


def test_restrict_empty_row_falls_back():
    rng = np.random.default_rng(12)
    aff = affinity(CorrelationMatrix(values=rng.uniform(-1, 1, size=(3, 4)).astype(np.float32)))
    bits = np.ones((3, 4), dtype=bool)
    bits[1] = False
    restricted, flags = restrict(aff, TrackMask(bits=bits))
    assert flags.tolist() == [False, True, False]
    assert np.array_equal(restricted.values[1], aff.values[1])


def test_restrict_matches_bruteforce():
    rng = np.random.default_rng(13)
    aff = affinity(CorrelationMatrix(values=rng.uniform(-1, 1, size=(6, 6)).astype(np.float32)))
    bits = rng.uniform(size=(6, 6)) < 0.4
    restricted, flags = restrict(aff, TrackMask(bits=bits))
    expected, expected_flags = oracle_restrict(aff.values, bits)
    assert np.abs(restricted.values - expected).max() < 1e-6
    assert np.array_equal(flags, expected_flags)


def test_restrict_idempotent():
    rng = np.random.default_rng(14)
    aff = affinity(CorrelationMatrix(values=rng.uniform(-1, 1, size=(6, 6)).astype(np.float32)))
    bits = rng.uniform(size=(6, 6)) < 0.3
    mask = TrackMask(bits=bits)
    once, _ = restrict(aff, mask)
    twice, _ = restrict(once, mask)
    assert np.abs(once.values - twice.values).max() < 1e-6


def test_restrict_dim_mismatch():
    aff = AffinityMatrix(values=np.full((2, 2), 0.5, dtype=np.float32))
    with pytest.raises(DimensionError):
        restrict(aff, TrackMask(bits=np.ones((3, 2), dtype=bool)))


def test_restrict_underflowed_support_goes_uniform():
    # float32 softmax underflows the weak entries to exactly 0; restricting
    # to only those must not divide by zero but spread uniformly instead
    corr = np.array([[0.0, 0.0, 120.0]], dtype=np.float32)
    aff = affinity(CorrelationMatrix(values=corr), temperature=0.5)
    assert aff.values[0, 0] == 0.0
    bits = np.array([[True, True, False]])
    restricted, flags = restrict(aff, TrackMask(bits=bits))
    assert not flags[0]
    assert np.allclose(restricted.values[0], [0.5, 0.5, 0.0])


def test_windowed_covers_grid_for_large_radius():
    rng = np.random.default_rng(15)
    a = _random_grid(rng, 3, 4, 5)
    b = _random_grid(rng, 3, 4, 5)
    full = affinity(correlation(a, b), temperature=1.0)
    win = windowed_affinity(a, b, radius=10, temperature=1.0)
    assert np.abs(win.values - full.values).max() < 1e-6


def test_windowed_corner_support():
    rng = np.random.default_rng(16)
    a = _random_grid(rng, 3, 3, 4)
    b = _random_grid(rng, 3, 3, 4)
    win = windowed_affinity(a, b, radius=1, temperature=1.0)
    corner = win.values[0]
    support = np.flatnonzero(corner)
    assert set(support.tolist()) <= {0, 1, 3, 4}  # clipped 2x2-reachable window
    assert support.size >= 1


def test_windowed_matches_bruteforce():
    rng = np.random.default_rng(17)
    a = _random_grid(rng, 6, 6, 4)
    b = _random_grid(rng, 6, 6, 4)
    win = windowed_affinity(a, b, radius=2, temperature=0.9)
    expected = oracle_windowed_affinity(a.flat(), b.flat(), 6, 6, 2, 0.9)
    assert np.abs(win.values - expected).max() < 1e-6


def test_windowed_support_within_chebyshev_radius():
    rng = np.random.default_rng(18)
    a = _random_grid(rng, 5, 7, 3)
    b = _random_grid(rng, 5, 7, 3)
    radius = 2
    win = windowed_affinity(a, b, radius=radius)
    gw = 7
    for i, j in zip(*np.nonzero(win.values)):
        yi, xi = divmod(int(i), gw)
        yj, xj = divmod(int(j), gw)
        assert max(abs(yi - yj), abs(xi - xj)) <= radius


def test_windowed_rejects_bad_radius():
    rng = np.random.default_rng(19)
    a = _random_grid(rng, 3, 3, 4)
    with pytest.raises(InvalidParameterError):
        windowed_affinity(a, a, radius=0)


def test_windowed_sparse_equals_dense():
    rng = np.random.default_rng(20)
    a = _random_grid(rng, 5, 5, 6)
    b = _random_grid(rng, 5, 5, 6)
    sparse_mat = windowed_affinity_csr(a, b, radius=3, temperature=0.5)
    dense = windowed_affinity(a, b, radius=3, temperature=0.5)
    assert np.abs(sparse_mat.toarray() - dense.values).max() < 1e-7


def test_row_stochastic_everywhere():
    rng = np.random.default_rng(21)
    for _ in range(20):
        gh, gw = rng.integers(2, 5, size=2)
        a = _random_grid(rng, gh, gw, 4)
        b = _random_grid(rng, gh, gw, 4)
        aff = affinity(correlation(a, b), temperature=float(rng.uniform(0.2, 2.0)))
        assert np.abs(aff.values.sum(axis=1, dtype=np.float64) - 1.0).max() < 1e-6
        win = windowed_affinity(a, b, radius=int(rng.integers(1, 4)))
        assert np.abs(win.values.sum(axis=1, dtype=np.float64) - 1.0).max() < 1e-6
