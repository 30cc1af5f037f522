"""Per-frame feature grids for correspondence.

Two sources exist: a built-in hand-crafted luminance descriptor, and an
external binary file in the STCF format written by a separate exporter
running a pretrained CNN. Both yield a :class:`FeatureGrid` per frame at a
reduced resolution of one cell per ``stride`` x ``stride`` pixel block.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import (
    CorruptionError,
    DimensionError,
    FormatError,
    InvalidInputError,
    InvalidParameterError,
    NotFoundError,
)
from .imaging import Frame

STCF_MAGIC = b"STCF"
STCF_VERSION = 1

DEFAULT_STRIDE = 4
DEFAULT_SCALES = (2, 4, 8)

_ORIENT_BINS = 8
_CHANNELS_PER_SCALE = 4 + _ORIENT_BINS


@dataclass
class FeatureGrid:
    """Dense per-cell feature field: ``data`` has shape (grid_h, grid_w, channels)."""

    data: np.ndarray
    stride: int

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise InvalidInputError(f"feature data must be (grid_h, grid_w, L), got {self.data.shape}")
        if self.stride < 1:
            raise InvalidParameterError("stride must be >= 1")
        if not np.isfinite(self.data).all():
            raise InvalidInputError("feature values must be finite")

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def n_cells(self) -> int:
        return self.data.shape[0] * self.data.shape[1]

    def flat(self) -> np.ndarray:
        """Features as an (n_cells, channels) view, row-major cell order."""
        return self.data.reshape(-1, self.data.shape[2])


@dataclass(frozen=True)
class FeatureSource:
    """Where feature grids come from: the builtin descriptor or an STCF file."""

    kind: str = "builtin"
    path: str | None = None

    @classmethod
    def parse(cls, spec: str) -> "FeatureSource":
        """Parse a CLI-style spec: ``builtin`` or ``stcf:PATH``."""
        if spec == "builtin":
            return cls("builtin")
        if spec.startswith("stcf:"):
            path = spec[len("stcf:") :]
            if not path:
                raise InvalidParameterError("stcf source needs a path, e.g. stcf:features.stcf")
            return cls("external", path)
        raise InvalidParameterError(f"unknown feature source {spec!r}")


def grid_dims(height: int, width: int, stride: int) -> tuple[int, int]:
    """Grid dimensions covering a frame: ceil(H/stride) x ceil(W/stride)."""
    return (-(-height // stride), -(-width // stride))


def extract_builtin(
    frame: Frame,
    stride: int = DEFAULT_STRIDE,
    scales: Sequence[int] = DEFAULT_SCALES,
) -> FeatureGrid:
    """Compute the hand-crafted multi-scale luminance descriptor.

    Per cell and per scale ``s`` the descriptor concatenates, over the
    (2s+1)^2 patch centered at the cell center: patch mean, patch std, mean
    absolute horizontal and vertical derivative, and an L1-normalized 8-bin
    gradient-orientation histogram weighted by gradient magnitude. Patch
    boundaries replicate edge pixels. Channels: 12 per scale.
    """
    if not scales:
        raise InvalidParameterError("need at least one scale")
    if stride < 1:
        raise InvalidParameterError("stride must be >= 1")
    h, w = frame.height, frame.width
    gh, gw = grid_dims(h, w, stride)
    if gh < 2 or gw < 2:
        raise InvalidInputError(f"{w}x{h} at stride {stride} yields a {gw}x{gh} grid; need at least 2x2")
    largest = 2 * max(scales) + 1
    if h < largest or w < largest:
        raise InvalidInputError(f"frame {w}x{h} is smaller than the largest patch ({largest}px)")

    lum = frame.l.astype(np.float64)
    gy, gx = np.gradient(lum)
    mag = np.hypot(gx, gy)
    theta = np.arctan2(gy, gx)
    bins = np.floor((theta + np.pi) / (2.0 * np.pi / _ORIENT_BINS)).astype(np.int64)
    np.clip(bins, 0, _ORIENT_BINS - 1, out=bins)
    bin_maps = np.zeros((_ORIENT_BINS,) + lum.shape)
    for k in range(_ORIENT_BINS):
        bin_maps[k] = np.where(bins == k, mag, 0.0)

    cy = np.minimum(np.arange(gh) * stride + stride // 2, h - 1)
    cx = np.minimum(np.arange(gw) * stride + stride // 2, w - 1)

    channels = []
    for s in scales:
        size = 2 * s + 1
        box = lambda a: uniform_filter(a, size=size, mode="nearest")
        mean = box(lum)
        var = np.maximum(box(lum * lum) - mean * mean, 0.0)
        hist = np.stack([box(bin_maps[k]) for k in range(_ORIENT_BINS)], axis=-1)
        total = hist.sum(axis=-1, keepdims=True)
        hist = np.divide(hist, total, out=np.zeros_like(hist), where=total > 0)
        per_scale = np.concatenate(
            [
                mean[..., None],
                np.sqrt(var)[..., None],
                box(np.abs(gx))[..., None],
                box(np.abs(gy))[..., None],
                hist,
            ],
            axis=-1,
        )
        channels.append(per_scale[np.ix_(cy, cx)])
    data = np.concatenate(channels, axis=-1)
    return FeatureGrid(data=data.astype(np.float32), stride=stride)


def write_stcf(path: str | Path, tensor: np.ndarray) -> None:
    """Write a (T, grid_h, grid_w, L) float32 tensor in STCF layout."""
    tensor = np.ascontiguousarray(tensor, dtype=np.float32)
    if tensor.ndim != 4:
        raise InvalidInputError(f"expected a (T, grid_h, grid_w, L) tensor, got {tensor.shape}")
    t, gh, gw, ch = tensor.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(STCF_MAGIC)
        fh.write(struct.pack("<5I", STCF_VERSION, t, gh, gw, ch))
        fh.write(tensor.astype("<f4").tobytes())


def load_external(
    path: str | Path,
    expected_dims: tuple[int, int, int] | None = None,
    stride: int = 1,
) -> list[FeatureGrid]:
    """Parse an STCF file and return its T feature grids.

    ``expected_dims`` is (T, grid_h, grid_w); a mismatch raises
    :class:`DimensionError`. Bad magic or version raises
    :class:`FormatError`; a payload of the wrong byte length raises
    :class:`CorruptionError`.
    """
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"no such file: {path}")
    blob = path.read_bytes()
    if len(blob) < 24:
        raise FormatError(f"{path.name}: file too short for an STCF header")
    if blob[:4] != STCF_MAGIC:
        raise FormatError(f"{path.name}: bad magic {blob[:4]!r}, expected {STCF_MAGIC!r}")
    version, t, gh, gw, ch = struct.unpack("<5I", blob[4:24])
    if version != STCF_VERSION:
        raise FormatError(f"{path.name}: unsupported STCF version {version}")
    expected_bytes = t * gh * gw * ch * 4
    payload = blob[24:]
    if len(payload) != expected_bytes:
        raise CorruptionError(
            f"{path.name}: payload holds {len(payload)} bytes, header implies {expected_bytes}"
        )
    if expected_dims is not None and (t, gh, gw) != tuple(expected_dims):
        raise DimensionError(
            f"{path.name}: file is T={t} {gh}x{gw}, expected T={expected_dims[0]} "
            f"{expected_dims[1]}x{expected_dims[2]}"
        )
    tensor = np.frombuffer(payload, dtype="<f4").reshape(t, gh, gw, ch)
    if not np.isfinite(tensor).all():
        raise CorruptionError(f"{path.name}: payload contains non-finite values")
    return [FeatureGrid(data=tensor[i].copy(), stride=stride) for i in range(t)]


def extract_sequence(
    frames: Iterable[Frame],
    source: FeatureSource,
    stride: int = DEFAULT_STRIDE,
    scales: Sequence[int] = DEFAULT_SCALES,
) -> list[FeatureGrid]:
    """Feature grids for a whole sequence from either source."""
    frames = list(frames)
    if source.kind == "builtin":
        return [extract_builtin(f, stride=stride, scales=scales) for f in frames]
    gh, gw = grid_dims(frames[0].height, frames[0].width, stride)
    return load_external(source.path, expected_dims=(len(frames), gh, gw), stride=stride)
