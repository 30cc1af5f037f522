"""End-to-end colorization: features, tracking masks, restricted warp, refinement.

For every target frame and every reference the pipeline builds the mode's
track mask, restricts one joint stacked affinity with it, warps reference
chrominance, and finally folds the refinement over time. Windowed
affinities between adjacent frames are computed once per (from, to) pair
and shared by all targets whose propagation chains cross that pair.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import correspondence as corr_mod
from .correspondence import StackedCorrelation, correlation, restrict, stacked_affinity
from .dense_tracking import DenseParams, build_dense_mask
from .errors import ConfigurationError, DimensionError, InvalidParameterError
from .features import (
    DEFAULT_SCALES,
    DEFAULT_STRIDE,
    FeatureGrid,
    FeatureSource,
    extract_builtin,
    extract_sequence,
    grid_dims,
)
from .imaging import Frame, VideoSequence
from .instance_tracking import (
    DEFAULT_IOU_THRESHOLD,
    DEFAULT_OCCUPANCY_THRESHOLD,
    InstanceLabelMap,
    build_instance_mask,
    track_instances,
)
from .masks import TrackMask
from .refine import DEFAULT_BLEND_FLOOR, Refiner, refine_frame
from .synth import generate_fixture  # noqa: F401  (fixture generation lives with the pipeline API)
from .warp import DEFAULT_FALLBACK_CONFIDENCE_FACTOR, WarpResult, upsample_ab, warp_multi

MASK_MODES = ("none", "inst", "dense", "inst+dense")
BLEND_WEIGHTINGS = ("mean", "linear")

ProgressFn = Callable[[str, int, int], None]


@dataclass(frozen=True)
class PipelineConfig:
    """All hyperparameters with their stock defaults."""

    stride: int = DEFAULT_STRIDE
    scales: tuple[int, ...] = DEFAULT_SCALES
    temperature: float = 1.0
    radius: int = 9
    binarize_threshold: float = 0.2
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    occupancy_threshold: float = DEFAULT_OCCUPANCY_THRESHOLD
    mask_mode: str = "none"
    refiner_kind: str = "temporal-blend"
    blend_floor: float = DEFAULT_BLEND_FLOOR
    fallback_confidence_factor: float = DEFAULT_FALLBACK_CONFIDENCE_FACTOR
    feature_source: str = "builtin"
    resize: Optional[tuple[int, int]] = (384, 216)
    reference_specs: tuple[tuple[int, str], ...] = ()

    def __post_init__(self) -> None:
        if self.mask_mode not in MASK_MODES:
            raise ConfigurationError(f"unknown mask mode {self.mask_mode!r}; use one of {MASK_MODES}")
        if self.stride < 1 or self.radius < 1:
            raise ConfigurationError("stride and radius must be >= 1")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")

    @property
    def dense_params(self) -> DenseParams:
        return DenseParams(
            radius=self.radius,
            binarize_threshold=self.binarize_threshold,
            temperature=self.temperature,
        )

    @property
    def refiner(self) -> Refiner:
        return Refiner(kind=self.refiner_kind, blend_floor=self.blend_floor)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        """Parse a ``key = value`` text file mirroring the CLI flags."""
        values: dict[str, object] = {}
        known = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            if key not in known:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_config_value(key, value)
        return cls(**values)


def _parse_config_value(key: str, value: str) -> object:
    if key in ("stride", "radius"):
        return int(value)
    if key in (
        "temperature",
        "binarize_threshold",
        "iou_threshold",
        "occupancy_threshold",
        "blend_floor",
        "fallback_confidence_factor",
    ):
        return float(value)
    if key == "scales":
        return tuple(int(v) for v in value.replace(",", " ").split())
    if key == "resize":
        if value.lower() in ("none", "off"):
            return None
        w, _, h = value.partition("x")
        return (int(w), int(h))
    if key == "reference_specs":
        specs = []
        for part in value.split(","):
            part = part.strip()
            if not part:
                continue
            idx, _, ref_path = part.partition("=")
            specs.append((int(idx), ref_path))
        return tuple(specs)
    return value


def combine_masks(inst: TrackMask, dense: TrackMask) -> TrackMask:
    """Instance gating first, dense fallback: per row use inst AND dense when
    non-empty, else the dense row, else the inst row, else stay empty."""
    if inst.bits.shape != dense.bits.shape:
        raise DimensionError(f"mask shapes differ: {inst.bits.shape} vs {dense.bits.shape}")
    both = inst.bits & dense.bits
    has_both = both.any(axis=1)
    has_dense = dense.bits.any(axis=1)
    out = np.where(
        has_both[:, None], both, np.where(has_dense[:, None], dense.bits, inst.bits)
    )
    return TrackMask(bits=out, origin="combined")


def _pool_ab(ab: np.ndarray, stride: int) -> np.ndarray:
    """Average-pool full-resolution chrominance onto the feature grid."""
    h, w = ab.shape[:2]
    gh, gw = grid_dims(h, w, stride)
    cell_of_px = (np.arange(h)[:, None] // stride) * gw + (np.arange(w)[None, :] // stride)
    flat_idx = cell_of_px.ravel()
    counts = np.bincount(flat_idx, minlength=gh * gw).astype(np.float64)
    pooled = np.stack(
        [np.bincount(flat_idx, weights=ab[..., c].ravel().astype(np.float64), minlength=gh * gw) for c in (0, 1)],
        axis=-1,
    )
    return (pooled / counts[:, None]).reshape(gh, gw, 2).astype(np.float32)


def _parallel_map(fn, items: Sequence, threads: int):
    """Order-preserving map; results do not depend on the schedule."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _chain(t: int, t_r: int) -> list[int]:
    step = 1 if t_r >= t else -1
    return list(range(t, t_r + step, step))


class _DenseCache:
    """Windowed affinities per adjacent (from, to) frame pair, built once."""

    def __init__(self, feats: Sequence[FeatureGrid], params: DenseParams):
        self._feats = feats
        self._params = params
        self._pairs: dict[tuple[int, int], object] = {}

    def build(self, keys: Sequence[tuple[int, int]], threads: int, progress: Optional[ProgressFn]) -> None:
        keys = sorted(set(keys))

        def make(key):
            src, dst = key
            return corr_mod.windowed_affinity_csr(
                self._feats[src - 1], self._feats[dst - 1], self._params.radius, self._params.temperature
            )

        done = 0
        for key, mat in zip(keys, _parallel_map(make, keys, threads)):
            self._pairs[key] = mat
            done += 1
            if progress:
                progress("pair-affinity", done, len(keys))

    def chain(self, frames: list[int]):
        return [self._pairs[(frames[k], frames[k + 1])] for k in range(len(frames) - 1)]


def colorize(
    sequence: VideoSequence,
    refs: Sequence[tuple[int, Frame]],
    config: PipelineConfig = PipelineConfig(),
    label_maps: Optional[Sequence[InstanceLabelMap]] = None,
    threads: int = 1,
    progress: Optional[ProgressFn] = None,
) -> tuple[VideoSequence, list[WarpResult]]:
    """Colorize a grayscale sequence from colored reference frames.

    ``refs`` pairs each reference's 1-based frame index with its color
    frame. Returns the colorized sequence plus per-frame warp diagnostics
    at grid resolution.
    """
    if not refs:
        raise ConfigurationError("need at least one reference frame")
    n = len(sequence)
    for idx, ref in refs:
        if not 1 <= idx <= n:
            raise ConfigurationError(f"reference index {idx} outside sequence 1..{n}")
        if (ref.height, ref.width) != (sequence.height, sequence.width):
            raise ConfigurationError(
                f"reference {idx} is {ref.width}x{ref.height}, sequence is {sequence.width}x{sequence.height}"
            )
        if ref.ab is None:
            raise ConfigurationError(f"reference {idx} carries no chrominance")

    needs_inst = config.mask_mode in ("inst", "inst+dense")
    needs_dense = config.mask_mode in ("dense", "inst+dense")
    gh, gw = grid_dims(sequence.height, sequence.width, config.stride)

    tracked: Optional[list[InstanceLabelMap]] = None
    if needs_inst:
        if label_maps is None:
            raise ConfigurationError(f"mode {config.mask_mode!r} requires instance label maps")
        if len(label_maps) != n:
            raise ConfigurationError(f"got {len(label_maps)} label maps for {n} frames")
        if (label_maps[0].grid_h, label_maps[0].grid_w) != (gh, gw):
            raise DimensionError(
                f"label maps are {label_maps[0].grid_w}x{label_maps[0].grid_h} cells, grid is {gw}x{gh}"
            )
        tracked = track_instances(label_maps, config.iou_threshold)

    source = FeatureSource.parse(config.feature_source)
    if source.kind == "builtin":
        feats = _parallel_map(
            lambda f: extract_builtin(f, stride=config.stride, scales=config.scales),
            sequence.frames,
            threads,
        )
    else:
        feats = extract_sequence(sequence.frames, source, stride=config.stride, scales=config.scales)
    if progress:
        progress("features", n, n)
    ref_indices = [idx for idx, _ in refs]
    if source.kind == "builtin":
        ref_feats = _parallel_map(
            lambda ref: extract_sequence([ref[1]], source, config.stride, config.scales)[0],
            list(refs),
            threads,
        )
    else:
        # External grids cover the video's frames; references are frames of
        # the video, so their features are the matching time slices.
        ref_feats = [feats[idx - 1] for idx in ref_indices]
    ref_ab_grids = [_pool_ab(ref.ab, config.stride) for _, ref in refs]

    # per-task buffers of the pair-affinity and warp stages scale with
    # (n_cells x n_cells); bound their concurrency on large grids so peak
    # memory stays flat (results are schedule-independent either way)
    heavy_threads = threads if gh * gw <= 4096 else min(threads, 2)

    dense_cache: Optional[_DenseCache] = None
    if needs_dense:
        dense_cache = _DenseCache(feats, config.dense_params)
        keys: list[tuple[int, int]] = []
        for t_r in ref_indices:
            for t in range(1, n + 1):
                frames_chain = _chain(t, t_r)
                keys.extend((frames_chain[k], frames_chain[k + 1]) for k in range(len(frames_chain) - 1))
        dense_cache.build(keys, heavy_threads, progress)

    def mask_for(t: int, r: int) -> Optional[TrackMask]:
        t_r = ref_indices[r]
        inst_mask = dense_mask = None
        if needs_inst:
            inst_mask = build_instance_mask(tracked[t - 1], tracked[t_r - 1], config.occupancy_threshold)
        if needs_dense:
            frames_chain = _chain(t, t_r)
            dense_mask = build_dense_mask(
                [feats[f - 1] for f in frames_chain],
                config.dense_params,
                frame_indices=frames_chain,
                pair_affinities=dense_cache.chain(frames_chain),
            )
        if config.mask_mode == "inst":
            return inst_mask
        if config.mask_mode == "dense":
            return dense_mask
        if config.mask_mode == "inst+dense":
            return combine_masks(inst_mask, dense_mask)
        return None

    def warp_target(t: int) -> WarpResult:
        corrs = StackedCorrelation(matrices=[correlation(feats[t - 1], rf) for rf in ref_feats])
        stacked = stacked_affinity(corrs, config.temperature)
        del corrs  # the correlation stack is large; release it before warping
        flags = None
        if config.mask_mode != "none":
            masks = [mask_for(t, r) for r in range(len(refs))]
            stacked, flags = restrict(stacked, masks)
            del masks
        result = warp_multi(
            stacked,
            ref_ab_grids,
            fallback_flags=flags,
            target_shape=(gh, gw),
            fallback_factor=config.fallback_confidence_factor,
        )
        if progress:
            progress("warp", t, n)
        return result

    warps = _parallel_map(warp_target, list(range(1, n + 1)), heavy_threads)

    refiner = config.refiner
    out_frames: list[Frame] = []
    prev_ab_grid: Optional[np.ndarray] = None
    prev_l: Optional[np.ndarray] = None
    for t, (frame, wr) in enumerate(zip(sequence.frames, warps), start=1):
        refined = refine_frame(refiner, prev_l, frame.l, prev_ab_grid, wr)
        full = upsample_ab(
            replace_ab(wr, refined), (sequence.height, sequence.width), config.stride
        )
        wr.ab_full = full.ab_full
        wr.confidence_full = full.confidence_full
        out_frames.append(
            Frame(l=frame.l.copy(), ab=np.clip(full.ab_full, -128.0, 127.0), index=t)
        )
        prev_ab_grid = refined
        prev_l = frame.l
        if progress:
            progress("refine", t, n)
    return VideoSequence(frames=out_frames, fps=sequence.fps), warps


def replace_ab(warp: WarpResult, ab: np.ndarray) -> WarpResult:
    """Copy of a warp result with substituted grid chrominance."""
    return WarpResult(ab=ab, confidence=warp.confidence, fallback=warp.fallback)


def blend_baseline(
    outputs: Sequence[tuple[int, VideoSequence]], weighting: str = "mean"
) -> VideoSequence:
    """Blend several single-reference outputs into one sequence.

    ``mean`` averages chrominance with equal weights. ``linear`` weights
    each reference output by 1 minus its normalized temporal distance to
    the target frame (renormalized per frame), so a frame coinciding with
    one of two references takes that output exactly and the midpoint splits
    evenly.
    """
    if weighting not in BLEND_WEIGHTINGS:
        raise InvalidParameterError(f"unknown weighting {weighting!r}; use one of {BLEND_WEIGHTINGS}")
    if len(outputs) < 2:
        raise InvalidParameterError("blending needs at least two single-reference outputs")
    n = len(outputs[0][1])
    for _, seq in outputs[1:]:
        if len(seq) != n or (seq.height, seq.width) != (outputs[0][1].height, outputs[0][1].width):
            raise DimensionError("all outputs must share length and dimensions")

    frames: list[Frame] = []
    for t in range(1, n + 1):
        if weighting == "mean":
            weights = np.full(len(outputs), 1.0 / len(outputs))
        else:
            dists = np.array([abs(t - idx) for idx, _ in outputs], dtype=np.float64)
            total = dists.sum()
            weights = np.full(len(outputs), 1.0 / len(outputs)) if total == 0 else 1.0 - dists / total
            weights /= weights.sum()
        ab = np.zeros(outputs[0][1][t - 1].ab.shape, dtype=np.float64)
        for w, (_, seq) in zip(weights, outputs):
            ab += w * seq[t - 1].ab.astype(np.float64)
        frames.append(Frame(l=outputs[0][1][t - 1].l.copy(), ab=ab.astype(np.float32), index=t))
    return VideoSequence(frames=frames, fps=outputs[0][1].fps)
