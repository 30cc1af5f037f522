"""Acceptance suite: one test per release criterion, one printed line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the PASS lines.
External benchmark scores cannot be reproduced at desk scale (they need
the trained feature and refinement networks plus the full datasets); the
property-based criteria below substitute for them.
"""

from __future__ import annotations

import math
import resource
import time

import numpy as np
import pytest

from chromaflow.correspondence import (
    CorrelationMatrix,
    StackedCorrelation,
    affinity,
    correlation,
    restrict,
    stacked_affinity,
    windowed_affinity,
    windowed_affinity_csr,
)
from chromaflow.dense_tracking import DenseParams, build_dense_mask
from chromaflow.errors import UndefinedRegionError
from chromaflow.evalkit import RegionSpec, mse, outlier_rate, outlier_sweep, psnr
from chromaflow.features import FeatureGrid
from chromaflow.instance_tracking import downsample_label_map
from chromaflow.masks import TrackMask
from chromaflow.pipeline import PipelineConfig, colorize
from chromaflow.refine import Refiner, refine_frame
from chromaflow.synth import generate_fixture
from chromaflow.warp import warp_multi, warp_single

from oracles import (
    oracle_correlation,
    oracle_dense_mask,
    oracle_restrict,
    oracle_restrict_stacked,
    oracle_softmax_rows,
    oracle_stacked_softmax,
    oracle_warp,
    oracle_warp_multi,
)

_oracle_elapsed: list[float] = []


def _report(name: str, detail: str = "") -> None:
    suffix = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE {name}: PASS{suffix}")


def _grid(rng, gh, gw, channels=6) -> FeatureGrid:
    return FeatureGrid(data=rng.normal(size=(gh, gw, channels)).astype(np.float32), stride=1)


def _timed(fn):
    start = time.monotonic()
    fn()
    _oracle_elapsed.append(time.monotonic() - start)


def test_benchmark_substitution_note():
    # Absolute external benchmark numbers are out of reach without the
    # trained networks and datasets; the oracle/property criteria below
    # are the agreed substitute. This check records that the suite covers them.
    _report("benchmark-substitution", "property-based criteria stand in for external benchmarks")


def test_oracle_correlation():
    rng = np.random.default_rng(100)

    def body():
        for _ in range(200):
            gh, gw = rng.integers(2, 9, size=2)
            channels = int(rng.integers(2, 9))
            a, b = _grid(rng, gh, gw, channels), _grid(rng, gh, gw, channels)
            ours = correlation(a, b).values
            expected = oracle_correlation(a.flat(), b.flat())
            assert np.abs(ours - expected).max() < 1e-6

    _timed(body)
    _report("oracle-correlation", "200 randomized cases, tol 1e-6")


def test_oracle_affinity():
    rng = np.random.default_rng(101)

    def body():
        for _ in range(200):
            n_t, n_r = rng.integers(2, 9, size=2)
            corr = rng.uniform(-1, 1, size=(n_t, n_r)).astype(np.float32)
            temp = float(rng.uniform(0.1, 2.0))
            ours = affinity(CorrelationMatrix(values=corr), temp).values
            expected = oracle_softmax_rows(corr, temp)
            assert np.abs(ours - expected).max() < 1e-6

    _timed(body)
    _report("oracle-affinity", "200 randomized cases, tol 1e-6")


def test_oracle_restricted_warp():
    rng = np.random.default_rng(102)

    def body():
        for _ in range(200):
            gh, gw = rng.integers(2, 9, size=2)
            n = int(gh * gw)
            corr = rng.uniform(-1, 1, size=(n, n)).astype(np.float32)
            aff = affinity(CorrelationMatrix(values=corr), 1.0)
            bits = rng.uniform(size=(n, n)) < rng.uniform(0.05, 0.6)
            restricted, flags = restrict(aff, TrackMask(bits=bits))
            exp_aff, exp_flags = oracle_restrict(aff.values, bits)
            assert np.abs(restricted.values - exp_aff).max() < 1e-6
            assert np.array_equal(flags, exp_flags)
            ref_ab = rng.uniform(-128, 127, size=(gh, gw, 2)).astype(np.float32)
            ours = warp_single(restricted, ref_ab, fallback_flags=flags)
            expected = oracle_warp(restricted.values, ref_ab.reshape(-1, 2))
            assert np.abs(ours.ab.reshape(-1, 2) - expected).max() < 1e-6

    _timed(body)
    _report("oracle-restricted-warp", "200 randomized cases, tol 1e-6")


def test_oracle_stacked_multi_reference_warp():
    rng = np.random.default_rng(103)

    def body():
        for _ in range(200):
            gh, gw = rng.integers(2, 7, size=2)
            n = int(gh * gw)
            n_refs = int(rng.integers(1, 3))
            corrs = [rng.uniform(-1, 1, size=(n, n)).astype(np.float32) for _ in range(n_refs)]
            temp = float(rng.uniform(0.2, 1.5))
            stacked = stacked_affinity(
                StackedCorrelation(matrices=[CorrelationMatrix(values=c) for c in corrs]), temp
            )
            expected_aff = oracle_stacked_softmax(corrs, temp)
            assert np.abs(stacked.values - expected_aff).max() < 1e-6
            bits = rng.uniform(size=(n_refs, n, n)) < rng.uniform(0.05, 0.6)
            masks = [TrackMask(bits=bits[r]) for r in range(n_refs)]
            restricted, flags = restrict(stacked, masks)
            exp_rest, exp_flags = oracle_restrict_stacked(stacked.values, bits)
            assert np.abs(restricted.values - exp_rest).max() < 1e-6
            assert np.array_equal(flags, exp_flags)
            refs_ab = [rng.uniform(-128, 127, size=(gh, gw, 2)).astype(np.float32) for _ in range(n_refs)]
            ours = warp_multi(restricted, refs_ab, fallback_flags=flags)
            expected = oracle_warp_multi(restricted.values, [r.reshape(-1, 2) for r in refs_ab])
            assert np.abs(ours.ab.reshape(-1, 2) - expected).max() < 1e-6

    _timed(body)
    _report("oracle-stacked-warp", "200 randomized cases, tol 1e-6")


def test_oracle_dense_propagation():
    rng = np.random.default_rng(104)

    def body():
        for case in range(200):
            if case % 10 == 0:
                gh, gw = int(rng.integers(6, 9)), int(rng.integers(6, 9))
            else:
                gh, gw = rng.integers(2, 6, size=2)
            frames = int(rng.integers(2, 6))
            radius = int(rng.integers(1, 4))
            theta = float(rng.uniform(0.05, 0.5))
            temp = float(rng.uniform(0.2, 1.5))
            grids = [_grid(rng, gh, gw, 5) for _ in range(frames)]
            ours = build_dense_mask(
                grids, DenseParams(radius=radius, binarize_threshold=theta, temperature=temp)
            )
            expected = oracle_dense_mask(
                [g.flat() for g in grids], int(gh), int(gw), radius, theta, temp
            )
            assert np.array_equal(ours.bits, expected)

    _timed(body)
    _report("oracle-dense-propagation", "200 randomized cases, bit-exact")


def test_oracle_suite_runtime():
    total = sum(_oracle_elapsed)
    assert len(_oracle_elapsed) == 5, "oracle tests must run before the runtime check"
    assert total < 60.0, f"oracle suite took {total:.1f}s"
    _report("oracle-suite-runtime", f"{total:.1f}s < 60s")


def test_normalization_suite():
    rng = np.random.default_rng(105)
    rows_checked = 0
    for case in range(1000):
        kind = case % 4
        if kind == 0:
            n_t, n_r = rng.integers(2, 10, size=2)
            corr = rng.uniform(-1, 1, size=(n_t, n_r)).astype(np.float32)
            values = affinity(CorrelationMatrix(values=corr), float(rng.uniform(0.1, 2))).values
            sums = values.sum(axis=1, dtype=np.float64)
        elif kind == 1:
            n = int(rng.integers(2, 8)) ** 2
            corr = rng.uniform(-1, 1, size=(n, n)).astype(np.float32)
            aff = affinity(CorrelationMatrix(values=corr), 1.0)
            bits = rng.uniform(size=(n, n)) < 0.3
            restricted, flags = restrict(aff, TrackMask(bits=bits))
            sums = restricted.values.sum(axis=1, dtype=np.float64)
        elif kind == 2:
            gh, gw = rng.integers(2, 7, size=2)
            a, b = _grid(rng, gh, gw), _grid(rng, gh, gw)
            win = windowed_affinity(a, b, radius=int(rng.integers(1, 4)))
            sums = win.values.sum(axis=1, dtype=np.float64)
        else:
            n = int(rng.integers(2, 6)) ** 2
            n_refs = int(rng.integers(1, 3))
            corrs = [rng.uniform(-1, 1, size=(n, n)).astype(np.float32) for _ in range(n_refs)]
            stacked = stacked_affinity(
                StackedCorrelation(matrices=[CorrelationMatrix(values=c) for c in corrs]), 1.0
            )
            bits = rng.uniform(size=(n_refs, n, n)) < 0.3
            restricted, _ = restrict(stacked, [TrackMask(bits=bits[r]) for r in range(n_refs)])
            sums = restricted.values.sum(axis=(0, 2), dtype=np.float64)
        assert np.abs(sums - 1.0).max() < 1e-6
        rows_checked += len(sums)
    _report("normalization", f"1000 cases / {rows_checked} rows, all sum to 1 within 1e-6")


def test_faithfulness_two_objects():
    start = time.monotonic()
    fx = generate_fixture("two-objects", 96, 96, 30, seed=0)
    refs = [(1, fx.color[0])]
    maps = [downsample_label_map(lp, stride=4) for lp in fx.labels_px]

    def object_stats(seq):
        frac_ok, mean_err, total = 0, [], 0
        for t in range(30):
            err = np.linalg.norm(
                seq[t].ab.astype(np.float64) - fx.color[t].ab.astype(np.float64), axis=2
            )
            obj = fx.labels_px[t] > 0
            frac_ok += int((err[obj] < 2.0).sum())
            total += int(obj.sum())
            mean_err.append(err[obj].mean())
        return frac_ok / total, float(np.mean(mean_err))

    results = {}
    for mode in ("dense", "inst+dense", "none"):
        cfg = PipelineConfig(mask_mode=mode, resize=None)
        label_maps = maps if "inst" in mode else None
        out, _ = colorize(fx.gray, refs, cfg, label_maps=label_maps, threads=1)
        results[mode] = object_stats(out)

    elapsed = time.monotonic() - start
    assert results["dense"][0] >= 0.95, results
    assert results["inst+dense"][0] >= 0.95, results
    assert results["none"][1] > results["dense"][1], results
    assert results["none"][1] > results["inst+dense"][1], results
    assert elapsed < 120.0, f"took {elapsed:.1f}s"
    _report(
        "faithfulness",
        f"dense {100 * results['dense'][0]:.1f}% / inst+dense {100 * results['inst+dense'][0]:.1f}% "
        f"object px < 2; none err {results['none'][1]:.1f} > dense err {results['dense'][1]:.2f}; "
        f"{elapsed:.0f}s",
    )


def test_mask_corruption_beats_color_propagation():
    # Sharp matching (temperature 0.05) keeps both sides of the comparison
    # meaningful: the chained baseline tracks well until colors are
    # corrupted, while mask corruption is absorbed by re-weighting within
    # the mask against the clean reference.
    temp = 0.05
    fx = generate_fixture("translating", 96, 96, 30, seed=0)
    n_frames = 30
    from chromaflow.features import extract_builtin

    feats = [extract_builtin(f, 4, (2, 4, 8)) for f in fx.gray.frames]
    gt_grids = [f.ab.astype(np.float64).reshape(24, 4, 24, 4, 2).mean(axis=(1, 3)) for f in fx.color.frames]
    ref_ab = gt_grids[0].astype(np.float32)
    n = 576

    cache = {
        (f, f - 1): windowed_affinity_csr(feats[f - 1], feats[f - 2], 9, temp)
        for f in range(2, n_frames + 1)
    }
    masks = []
    for t in range(1, n_frames + 1):
        chain = list(range(t, 0, -1))
        pairs = [cache[(chain[k], chain[k + 1])] for k in range(len(chain) - 1)]
        masks.append(
            build_dense_mask([feats[f - 1] for f in chain], DenseParams(temperature=temp), pair_affinities=pairs)
        )
    stacked = [
        stacked_affinity(StackedCorrelation(matrices=[correlation(feats[t - 1], feats[0])]), temp)
        for t in range(1, n_frames + 1)
    ]

    def ours(corrupt_seed):
        rng = np.random.default_rng(corrupt_seed)
        refiner = Refiner()
        prev, errs = None, []
        for t in range(1, n_frames + 1):
            bits = masks[t - 1].bits.copy()
            if corrupt_seed is not None:
                bits ^= rng.uniform(size=bits.shape) < 0.10
            restricted, flags = restrict(stacked[t - 1], [TrackMask(bits=bits)])
            wr = warp_multi(restricted, [ref_ab], fallback_flags=flags, target_shape=(24, 24))
            refined = refine_frame(refiner, None, None, prev, wr)
            prev = refined
            if t >= 6:
                errs.append(np.linalg.norm(refined - gt_grids[t - 1], axis=2).mean())
        return float(np.mean(errs))

    def chained_baseline(corrupt_seed):
        # test-only oracle: colors hop frame to frame through the windowed
        # affinity instead of coming fresh from the reference
        rng = np.random.default_rng(corrupt_seed if corrupt_seed is not None else 0)
        cur = ref_ab.reshape(-1, 2).astype(np.float64)
        errs = []
        for t in range(2, n_frames + 1):
            cur = np.asarray(cache[(t, t - 1)] @ cur)
            if corrupt_seed is not None and t == 5:
                cells = rng.choice(n, size=int(0.10 * n), replace=False)
                cur[cells] = -cur[cells]
            if t >= 6:
                errs.append(np.linalg.norm(cur.reshape(24, 24, 2) - gt_grids[t - 1], axis=2).mean())
        return float(np.mean(errs))

    ours_clean = ours(None)
    base_clean = chained_baseline(None)
    ours_deg = ours(42) - ours_clean
    base_deg = chained_baseline(42) - base_clean
    assert ours_deg < base_deg, (ours_deg, base_deg)
    _report(
        "mask-corruption",
        f"mask-corrupted degradation {ours_deg:.2f} < color-corrupted chain degradation {base_deg:.2f}",
    )


def test_metric_correctness():
    # closed-form PSNR values
    a = np.zeros((6, 6, 3), dtype=np.uint8)
    b = np.full((6, 6, 3), 16, dtype=np.uint8)
    assert abs(psnr(a, b) - 10.0 * math.log10(255.0**2 / 256.0)) < 1e-9
    assert psnr(a, a) == 99.0
    white = np.full((6, 6, 3), 255, dtype=np.uint8)
    assert abs(psnr(a, white) - 0.0) < 1e-9

    # outlier boundary semantics at the default threshold 16
    c = a.copy()
    c[..., 0] = 16
    assert outlier_rate(a, c, 16.0) == 0.0
    c[..., 0] = 17
    assert outlier_rate(a, c, 16.0) == 100.0

    # sweep monotonicity on 100 random pairs
    rng = np.random.default_rng(106)
    for _ in range(100):
        p = rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8)
        g = rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8)
        reports = outlier_sweep([p], [g], [4.0, 8.0, 16.0, 32.0, 64.0])
        means = [r.mean for r in reports]
        assert all(x >= y for x, y in zip(means, means[1:]))

    # inner/outer MSE partition identity
    for _ in range(20):
        p = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        g = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        mask = rng.uniform(size=(8, 8)) < rng.uniform(0.2, 0.8)
        if not mask.any() or mask.all():
            continue
        n_inner = int(mask.sum())
        full = mse(p, g)
        inner = mse(p, g, RegionSpec("inner", mask))
        outer = mse(p, g, RegionSpec("outer", mask))
        assert abs(full * 64 - (inner * n_inner + outer * (64 - n_inner))) < 1e-6
    with pytest.raises(UndefinedRegionError):
        psnr(a, a, RegionSpec("inner", np.zeros((6, 6), dtype=bool)))
    _report("metric-correctness", "closed forms 1e-9, boundary exact, monotone, partition 1e-6")


def test_hyperparameter_defaults_snapshot():
    cfg = PipelineConfig()
    assert cfg.radius == 9
    assert cfg.binarize_threshold == 0.2
    assert cfg.resize == (384, 216)

    from chromaflow.cli import build_parser

    parser = build_parser()
    sub = next(a for a in parser._actions if hasattr(a, "choices") and a.choices and "colorize" in a.choices)
    col = sub.choices["colorize"]
    defaults = {a.dest: a.default for a in col._actions}
    assert defaults["radius"] == 9
    assert defaults["binarize_threshold"] == 0.2
    assert defaults["resize"] == "384x216"
    _report("hyperparameter-defaults", "R=9, binarize 0.2, 384x216 working resolution")


def test_performance_budget():
    fx = generate_fixture("translating", 384, 216, 30, seed=3)
    refs = [(1, fx.color[0])]
    cfg = PipelineConfig(mask_mode="dense", resize=None)

    start = time.monotonic()
    out_single, _ = colorize(fx.gray, refs, cfg, threads=1)
    elapsed = time.monotonic() - start
    peak_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    assert elapsed < 120.0, f"single-threaded run took {elapsed:.1f}s"
    assert peak_mb < 2048.0, f"peak RSS {peak_mb:.0f} MB"

    out_parallel, _ = colorize(fx.gray, refs, cfg, threads=8)
    for fa, fb in zip(out_single.frames, out_parallel.frames):
        assert np.array_equal(fa.ab, fb.ab)
        assert np.array_equal(fa.l, fb.l)
    _report(
        "performance-budget",
        f"{elapsed:.1f}s < 120s, {peak_mb:.0f} MB < 2048 MB, 8-thread output bit-identical",
    )
