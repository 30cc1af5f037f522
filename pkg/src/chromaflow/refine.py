"""Refinement stage: turn per-frame warp results into the output chrominance.

The trained refinement network of the original system is out of scope here;
this module fixes its call contract (previous and current luminance,
previous refined chrominance, warp result with confidence) and ships two
deterministic implementations: ``identity`` passes the warp through, and
``temporal-blend`` mixes the warp with the previous frame's chrominance
using the confidence map as a per-cell blend weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, InvalidParameterError
from .warp import WarpResult

REFINER_KINDS = ("identity", "temporal-blend")
DEFAULT_BLEND_FLOOR = 0.25


@dataclass(frozen=True)
class Refiner:
    """Refinement behavior: ``kind`` plus the minimum blend weight toward the warp."""

    kind: str = "temporal-blend"
    blend_floor: float = DEFAULT_BLEND_FLOOR

    def __post_init__(self) -> None:
        if self.kind not in REFINER_KINDS:
            raise InvalidParameterError(f"unknown refiner kind {self.kind!r}; use one of {REFINER_KINDS}")
        if not 0.0 <= self.blend_floor <= 1.0:
            raise InvalidParameterError(f"blend_floor must be in [0, 1], got {self.blend_floor}")


def refine_frame(
    refiner: Refiner,
    prev_l: Optional[np.ndarray],
    cur_l: np.ndarray,
    prev_ab: Optional[np.ndarray],
    warp: WarpResult,
) -> np.ndarray:
    """Refined chrominance for one frame.

    For the first frame (``prev_ab`` is None) both kinds return the warp
    unchanged. Under ``temporal-blend`` each cell blends
    ``lam * warp + (1 - lam) * prev`` with ``lam = max(blend_floor, confidence)``.
    ``prev_l``/``cur_l`` complete the refinement contract and are unused by
    the built-in kinds.
    """
    if prev_ab is None:
        return warp.ab.copy()
    prev_ab = np.asarray(prev_ab, dtype=np.float32)
    if prev_ab.shape != warp.ab.shape:
        raise DimensionError(f"previous ab {prev_ab.shape} does not match warp {warp.ab.shape}")
    if refiner.kind == "identity":
        return warp.ab.copy()
    lam = np.maximum(np.float32(refiner.blend_floor), warp.confidence)[..., None]
    return lam * warp.ab + (1.0 - lam) * prev_ab
