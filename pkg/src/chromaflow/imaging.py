"""Frame representation, Lab color conversion and frame-sequence I/O.

Frames are stored as a float32 luminance plane in [0, 100] plus an optional
pair of chrominance planes in [-128, 127] (CIE Lab, sRGB/D65 conversion).
On disk a sequence is a directory of PNG files named by a zero-padded
integer template such as ``frame_%05d.png``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import InconsistentSequenceError, InvalidInputError, NotFoundError

# sRGB (D65) <-> XYZ matrices and CIE Lab constants.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_LAB_EPS = 216.0 / 24389.0
_LAB_KAPPA = 24389.0 / 27.0


@dataclass
class Frame:
    """One video frame split into luminance and optional chrominance planes.

    ``l`` has shape (height, width) with values in [0, 100]; ``ab`` has shape
    (height, width, 2) with values in [-128, 127] or is None for grayscale
    frames. ``index`` is the 1-based temporal position.
    """

    l: np.ndarray
    ab: Optional[np.ndarray] = None
    index: int = 1

    def __post_init__(self) -> None:
        self.l = np.asarray(self.l, dtype=np.float32)
        if self.l.ndim != 2 or self.l.size == 0:
            raise InvalidInputError(f"luminance plane must be 2-D and non-empty, got shape {self.l.shape}")
        if self.l.min() < -1e-3 or self.l.max() > 100.0 + 1e-3:
            raise InvalidInputError("luminance values must lie in [0, 100]")
        if self.ab is not None:
            self.ab = np.asarray(self.ab, dtype=np.float32)
            if self.ab.shape != self.l.shape + (2,):
                raise InvalidInputError(
                    f"chrominance shape {self.ab.shape} does not match luminance {self.l.shape}"
                )
            if self.ab.min() < -128.0 - 1e-3 or self.ab.max() > 127.0 + 1e-3:
                raise InvalidInputError("chrominance values must lie in [-128, 127]")

    @property
    def height(self) -> int:
        return self.l.shape[0]

    @property
    def width(self) -> int:
        return self.l.shape[1]

    @property
    def has_color(self) -> bool:
        return self.ab is not None


@dataclass
class VideoSequence:
    """Ordered list of frames with consistent dimensions and 1-based indices."""

    frames: list[Frame] = field(default_factory=list)
    fps: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.frames:
            raise InvalidInputError("a sequence needs at least one frame")
        h, w = self.frames[0].height, self.frames[0].width
        for pos, frame in enumerate(self.frames, start=1):
            if frame.index != pos:
                raise InconsistentSequenceError(
                    f"frame at position {pos} carries index {frame.index}; indices must run 1..N"
                )
            if (frame.height, frame.width) != (h, w):
                raise InconsistentSequenceError(
                    f"frame {pos} is {frame.width}x{frame.height}, expected {w}x{h}"
                )

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, pos: int) -> Frame:
        return self.frames[pos]

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c > 0.04045, ((c + 0.055) / 1.055) ** 2.4, c / 12.92)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, 1.0)
    return np.where(c > 0.0031308, 1.055 * c ** (1.0 / 2.4) - 0.055, 12.92 * c)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_EPS, np.cbrt(t), (_LAB_KAPPA * t + 16.0) / 116.0)


def _lab_f_inv(f: np.ndarray) -> np.ndarray:
    f3 = f**3
    return np.where(f3 > _LAB_EPS, f3, (116.0 * f - 16.0) / _LAB_KAPPA)


def rgb_to_lab(rgb: np.ndarray, index: int = 1) -> Frame:
    """Convert an 8-bit RGB raster of shape (H, W, 3) to a Lab :class:`Frame`."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise InvalidInputError(f"expected a non-empty (H, W, 3) raster, got shape {rgb.shape}")
    linear = _srgb_to_linear(rgb.astype(np.float64) / 255.0)
    xyz = linear @ _RGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE_D65)
    lum = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    lum = np.clip(lum, 0.0, 100.0)
    ab = np.clip(np.stack([a, b], axis=-1), -128.0, 127.0)
    return Frame(l=lum, ab=ab, index=index)


def lab_to_rgb(frame: Frame) -> np.ndarray:
    """Convert a color frame back to an 8-bit RGB raster, clamping out-of-gamut values."""
    if frame.ab is None:
        raise InvalidInputError("frame has no chrominance planes")
    lum = frame.l.astype(np.float64)
    a = frame.ab[..., 0].astype(np.float64)
    b = frame.ab[..., 1].astype(np.float64)
    fy = (lum + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1) * _WHITE_D65
    rgb = _linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def gray_to_frame(gray: np.ndarray, index: int = 1) -> Frame:
    """Build a luminance-only frame from an 8-bit grayscale raster."""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.size == 0:
        raise InvalidInputError(f"expected a non-empty (H, W) raster, got shape {gray.shape}")
    linear = _srgb_to_linear(gray.astype(np.float64) / 255.0)
    lum = np.clip(116.0 * _lab_f(linear) - 16.0, 0.0, 100.0)
    return Frame(l=lum, ab=None, index=index)


def _template_regex(pattern: str) -> re.Pattern[str]:
    """Translate a printf-style integer template into a capturing regex."""
    match = re.search(r"%(0?)(\d*)d", pattern)
    if match is None:
        raise InvalidInputError(f"pattern {pattern!r} has no %d placeholder")
    head = re.escape(pattern[: match.start()])
    tail = re.escape(pattern[match.end() :])
    return re.compile(f"^{head}(\\d+){tail}$")


def load_sequence(directory: str | Path, pattern: str = "frame_%05d.png") -> VideoSequence:
    """Load a PNG frame sequence, sorted by the integer embedded in each name.

    Frames are renumbered 1..N in sorted order. Single-channel PNGs produce
    luminance-only frames; 3-channel PNGs produce color frames.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFoundError(f"no such directory: {directory}")
    regex = _template_regex(pattern)
    found: list[tuple[int, Path]] = []
    for path in directory.iterdir():
        m = regex.match(path.name)
        if m:
            found.append((int(m.group(1)), path))
    if not found:
        raise NotFoundError(f"no files matching {pattern!r} in {directory}")
    found.sort()

    frames: list[Frame] = []
    dims: Optional[tuple[int, int]] = None
    for pos, (_, path) in enumerate(found, start=1):
        with Image.open(path) as img:
            if img.mode in ("L", "I", "I;16"):
                arr = np.asarray(img.convert("L"))
                frame = gray_to_frame(arr, index=pos)
            else:
                arr = np.asarray(img.convert("RGB"))
                frame = rgb_to_lab(arr, index=pos)
        if dims is None:
            dims = (frame.height, frame.width)
        elif (frame.height, frame.width) != dims:
            raise InconsistentSequenceError(
                f"{path.name} is {frame.width}x{frame.height}, expected {dims[1]}x{dims[0]}"
            )
        frames.append(frame)
    return VideoSequence(frames=frames)


def save_frame(frame: Frame, path: str | Path) -> None:
    """Write a frame as PNG: RGB when chrominance is present, grayscale otherwise."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if frame.ab is not None:
        Image.fromarray(lab_to_rgb(frame)).save(path)
    else:
        linear = _lab_f_inv((frame.l.astype(np.float64) + 16.0) / 116.0)
        gray = np.clip(np.rint(_linear_to_srgb(linear) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(gray, mode="L").save(path)


def save_sequence(sequence: VideoSequence, directory: str | Path, pattern: str = "frame_%05d.png") -> list[Path]:
    """Write all frames of a sequence under ``directory`` using ``pattern``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for frame in sequence.frames:
        path = directory / (pattern % frame.index)
        save_frame(frame, path)
        paths.append(path)
    return paths


def resize_frame(frame: Frame, width: int, height: int) -> Frame:
    """Bilinearly resize a frame to ``width`` x ``height`` via its RGB rendering."""
    if width <= 0 or height <= 0:
        raise InvalidInputError("target dimensions must be positive")
    if (frame.width, frame.height) == (width, height):
        return frame
    if frame.ab is not None:
        img = Image.fromarray(lab_to_rgb(frame)).resize((width, height), Image.BILINEAR)
        return rgb_to_lab(np.asarray(img), index=frame.index)
    linear = _lab_f_inv((frame.l.astype(np.float64) + 16.0) / 116.0)
    gray = np.clip(np.rint(_linear_to_srgb(linear) * 255.0), 0, 255).astype(np.uint8)
    img = Image.fromarray(gray, mode="L").resize((width, height), Image.BILINEAR)
    return gray_to_frame(np.asarray(img), index=frame.index)
