"""Binary target-to-reference cell relations restricting color transfer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class TrackMask:
    """Binary relation over (target cell, reference cell) pairs.

    ``bits[i, j]`` is True when target cell i may draw color from reference
    cell j. ``origin`` records which tracker produced it: "instance",
    "dense" or "combined".
    """

    bits: np.ndarray
    origin: str = "dense"

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise InvalidInputError(f"mask bits must be 2-D, got shape {self.bits.shape}")
        if self.origin not in ("instance", "dense", "combined"):
            raise InvalidInputError(f"unknown mask origin {self.origin!r}")

    @property
    def n_target(self) -> int:
        return self.bits.shape[0]

    @property
    def n_ref(self) -> int:
        return self.bits.shape[1]

    def empty_rows(self) -> np.ndarray:
        """Boolean vector marking target cells with no allowed reference cell."""
        return ~self.bits.any(axis=1)
