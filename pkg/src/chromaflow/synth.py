"""Seeded synthetic sequences with known ground truth for desk-scale runs.

Three fixtures exist. ``two-objects`` places two squares with identical
luminance texture but different chrominance in separate color regions and
bounces them horizontally at one cell per frame; semantic features alone
cannot tell them apart, temporal tracking can. ``translating`` uses
uniquely textured squares. ``static`` repeats a single frame. All fixtures
emit gray frames, ground-truth color frames, pixel-resolution instance
label maps, and analytic per-object cell tracks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .imaging import Frame, VideoSequence

FIXTURE_NAMES = ("two-objects", "translating", "static")

CELL = 4
_LUM_LO, _LUM_HI = 35.0, 75.0
# Chrominance pairs kept inside the sRGB gamut across the fixture's
# luminance range [35, 75], mutually separated by > 55 ab units.
_COLOR_A = (44.0, -28.0)
_COLOR_B = (-36.0, 36.0)
_COLOR_C = (-12.0, -16.0)


@dataclass
class Fixture:
    """Generated sequences plus ground truth bookkeeping."""

    name: str
    gray: VideoSequence
    color: VideoSequence
    labels_px: list[np.ndarray]
    cell: int = CELL
    # object id -> list of (row_cell, col_cell) top-left positions per frame
    tracks: dict[int, list[tuple[int, int]]] = field(default_factory=dict)


def _triangle(t: int, lo: int, hi: int, phase: int = 0) -> int:
    """Position bouncing between lo and hi at one unit per step."""
    span = hi - lo
    if span == 0:
        return lo
    x = (t + phase) % (2 * span)
    return lo + (x if x <= span else 2 * span - x)


def _pixel_noise(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Per-pixel luminance noise: every cell gets a rich unique signature."""
    return rng.uniform(_LUM_LO, _LUM_HI, size=(h, w))


def _row_stripes(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Background texture unique per pixel row and constant along it.

    Cells occluded by a passing object re-localize somewhere on their own
    row, so tracking drift can never cross a horizontal color-region split.
    """
    return rng.uniform(_LUM_LO, _LUM_HI, size=(h, 1)).repeat(w, axis=1)


def _paint(
    lum_bg: np.ndarray,
    ab_bg: np.ndarray,
    objects: list[tuple[int, tuple[int, int], np.ndarray, tuple[float, float] | None]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stamp (id, cell position, texture, optional ab) objects onto copies of the canvas."""
    lum = lum_bg.copy()
    ab = ab_bg.copy()
    labels = np.zeros(lum.shape, dtype=np.uint16)
    for obj_id, (row, col), texture, obj_ab in objects:
        y, x = row * CELL, col * CELL
        h, w = texture.shape
        lum[y : y + h, x : x + w] = texture
        labels[y : y + h, x : x + w] = obj_id
        if obj_ab is not None:
            ab[y : y + h, x : x + w] = obj_ab
    return lum, ab, labels


def _build(
    lum_frames: list[np.ndarray], ab_frames: list[np.ndarray]
) -> tuple[VideoSequence, VideoSequence]:
    gray = VideoSequence(
        frames=[Frame(l=l, ab=None, index=i) for i, l in enumerate(lum_frames, start=1)]
    )
    color = VideoSequence(
        frames=[
            Frame(l=l, ab=ab, index=i)
            for i, (l, ab) in enumerate(zip(lum_frames, ab_frames), start=1)
        ]
    )
    return gray, color


def generate_fixture(
    name: str, width: int = 96, height: int = 96, n_frames: int = 30, seed: int = 0
) -> Fixture:
    """Deterministic fixture generation; the same seed reproduces bit-identical data."""
    if name not in FIXTURE_NAMES:
        raise ConfigurationError(f"unknown fixture {name!r}; choose from {FIXTURE_NAMES}")
    if width % CELL or height % CELL:
        raise ConfigurationError(f"fixture dimensions must be multiples of {CELL}")
    gh, gw = height // CELL, width // CELL
    rng = np.random.default_rng(seed)
    bg_lum = _row_stripes(rng, height, width)

    if name == "static":
        obj = max(3, min(gh, gw) // 4)
        texture = _pixel_noise(rng, obj * CELL, obj * CELL)
        split = height // 2
        ab_bg = np.empty((height, width, 2), dtype=np.float32)
        ab_bg[:split] = _COLOR_A
        ab_bg[split:] = _COLOR_B
        pos = ((gh - obj) // 4, (gw - obj) // 2)
        lum, ab, labels = _paint(bg_lum, ab_bg, [(1, pos, texture, None)])
        gray, color = _build([lum] * n_frames, [ab] * n_frames)
        return Fixture(
            name=name,
            gray=gray,
            color=color,
            labels_px=[labels] * n_frames,
            tracks={1: [pos] * n_frames},
        )

    obj = max(3, min(gh, gw) // 4)
    # Top and bottom lanes maximize the vertical gap; at the default 96x96
    # geometry the gap (10 cells) exceeds the default window reach (8 cells),
    # so one propagation step can never span both objects.
    a_row = 1
    b_row = gh - 1 - obj
    if b_row - (a_row + obj) < 1:
        raise ConfigurationError(f"{width}x{height} is too small to separate two objects")
    cmin, cmax = 1, gw - obj - 1
    split = ((a_row + obj + b_row) // 2) * CELL

    ab_bg = np.empty((height, width, 2), dtype=np.float32)
    ab_bg[:split] = _COLOR_A
    ab_bg[split:] = _COLOR_B

    texture_a = _pixel_noise(rng, obj * CELL, obj * CELL)
    if name == "two-objects":
        texture_b = texture_a  # identical appearance: only time can disambiguate
        ab_a = ab_b = None  # objects inherit their region's chrominance
    else:
        texture_b = _pixel_noise(rng, obj * CELL, obj * CELL)
        ab_a, ab_b = _COLOR_C, _COLOR_A

    lum_frames, ab_frames, labels_frames = [], [], []
    tracks: dict[int, list[tuple[int, int]]] = {1: [], 2: []}
    for t in range(n_frames):
        pos_a = (a_row, _triangle(t, cmin, cmax))
        pos_b = (b_row, _triangle(t, cmin, cmax, phase=cmax - cmin))
        lum, ab, labels = _paint(
            bg_lum, ab_bg, [(1, pos_a, texture_a, ab_a), (2, pos_b, texture_b, ab_b)]
        )
        lum_frames.append(lum)
        ab_frames.append(ab)
        labels_frames.append(labels)
        tracks[1].append(pos_a)
        tracks[2].append(pos_b)
    gray, color = _build(lum_frames, ab_frames)
    return Fixture(name=name, gray=gray, color=color, labels_px=labels_frames, tracks=tracks)
