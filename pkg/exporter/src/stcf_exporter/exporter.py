"""Frame-directory to STCF export.

Frames load as grayscale, replicate to three channels, pass through the
truncated VGG19 stack, and each tapped activation is bilinearly resampled
to the target grid (ceil(H/stride) x ceil(W/stride)) before channel
concatenation. Inference runs without gradients, so identical inputs and
weights produce byte-identical files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .backbone import DEFAULT_TAPS, IMAGENET_MEAN, IMAGENET_STD, load_backbone, run_taps
from .stcf import write_stcf


class ExportDataError(ValueError):
    """Input frames are unusable (missing, inconsistent, not images)."""


@dataclass(frozen=True)
class ExportJob:
    """One export run: where frames come from, which taps, where the file goes."""

    input_dir: str | Path
    output_path: str | Path
    stride: int = 4
    taps: Sequence[int] = DEFAULT_TAPS
    weights: str | Path | None = None
    pattern: str = "frame_%05d.png"

    def grid_dims(self, height: int, width: int) -> tuple[int, int]:
        return (-(-height // self.stride), -(-width // self.stride))


def _frame_paths(directory: Path, pattern: str) -> list[Path]:
    match = re.search(r"%(0?)(\d*)d", pattern)
    if match is None:
        raise ExportDataError(f"pattern {pattern!r} has no %d placeholder")
    regex = re.compile(
        f"^{re.escape(pattern[: match.start()])}(\\d+){re.escape(pattern[match.end():])}$"
    )
    if not directory.is_dir():
        raise ExportDataError(f"no such directory: {directory}")
    found = sorted((int(m.group(1)), p) for p in directory.iterdir() if (m := regex.match(p.name)))
    if not found:
        raise ExportDataError(f"no frames matching {pattern!r} in {directory}")
    return [p for _, p in found]


def _load_gray(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float32) / 255.0


def export(job: ExportJob) -> Path:
    """Run the backbone over every frame and write the STCF file."""
    if job.stride < 1:
        raise ExportDataError("stride must be >= 1")
    paths = _frame_paths(Path(job.input_dir), job.pattern)
    first = _load_gray(paths[0])
    height, width = first.shape
    gh, gw = job.grid_dims(height, width)

    stack = load_backbone(job.taps, job.weights)
    mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)

    blocks: list[np.ndarray] = []
    with torch.no_grad():
        for path in paths:
            gray = _load_gray(path)
            if gray.shape != (height, width):
                raise ExportDataError(
                    f"{path.name} is {gray.shape[1]}x{gray.shape[0]}, expected {width}x{height}"
                )
            batch = torch.from_numpy(gray).view(1, 1, height, width).repeat(1, 3, 1, 1)
            batch = (batch - mean) / std
            taps = run_taps(stack, batch, job.taps)
            resampled = [
                F.interpolate(t, size=(gh, gw), mode="bilinear", align_corners=False)
                for t in taps
            ]
            stacked = torch.cat(resampled, dim=1)[0]  # (L, gh, gw)
            blocks.append(stacked.permute(1, 2, 0).contiguous().numpy().astype(np.float32))

    tensor = np.stack(blocks, axis=0)
    return write_stcf(job.output_path, tensor)
