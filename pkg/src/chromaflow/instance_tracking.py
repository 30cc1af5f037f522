"""IoU-based association of per-frame instance label maps and the instance mask.

Label maps arrive as externally produced per-frame segmentations (16-bit
grayscale PNG at pixel resolution, 0 = background). They are downsampled to
the feature grid by majority vote, associated across time greedily by IoU,
and turned into a binary relation that lets each target cell draw color only
from reference cells of the same tracked object (background maps to
background).
"""

from __future__ import annotations

import re
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import DimensionError, InvalidInputError, InvalidParameterError, NotFoundError
from .masks import TrackMask

DEFAULT_IOU_THRESHOLD = 0.3
DEFAULT_OCCUPANCY_THRESHOLD = 0.5


@dataclass
class InstanceLabelMap:
    """Grid-resolution instance labels plus optional soft per-object occupancy.

    ``labels[y, x]`` holds an integer object id (0 = background).
    ``soft_masks`` maps object id to an occupancy field in [0, 1]: the
    fraction of the cell's pixels covered by that object. ``track_space``
    tags maps whose ids share one consistent space (set by
    :func:`track_instances`).
    """

    labels: np.ndarray
    soft_masks: dict[int, np.ndarray] = field(default_factory=dict)
    track_space: Optional[str] = None

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise InvalidInputError(f"labels must be 2-D, got shape {self.labels.shape}")
        if self.labels.min() < 0:
            raise InvalidInputError("instance ids must be non-negative")
        if self.soft_masks:
            total = np.zeros(self.labels.shape)
            for obj_id, occ in self.soft_masks.items():
                occ = np.asarray(occ)
                if occ.shape != self.labels.shape:
                    raise DimensionError(f"soft mask for id {obj_id} has shape {occ.shape}")
                total += occ
            if total.max() > 1.0 + 1e-6:
                raise InvalidInputError("per-cell soft occupancies must sum to at most 1")

    @property
    def grid_h(self) -> int:
        return self.labels.shape[0]

    @property
    def grid_w(self) -> int:
        return self.labels.shape[1]

    def object_ids(self) -> list[int]:
        ids = set(np.unique(self.labels).tolist()) | set(self.soft_masks)
        ids.discard(0)
        return sorted(ids)


def downsample_label_map(labels_px: np.ndarray, stride: int) -> InstanceLabelMap:
    """Reduce a pixel-resolution label map to the feature grid.

    Each cell takes the majority pixel label (ties break toward the lower
    id); soft occupancy per object is the covered fraction of the cell's
    actual pixels, so ragged border cells are weighted correctly.
    """
    labels_px = np.asarray(labels_px)
    if labels_px.ndim != 2:
        raise InvalidInputError(f"label map must be 2-D, got {labels_px.shape}")
    if stride < 1:
        raise InvalidParameterError("stride must be >= 1")
    h, w = labels_px.shape
    gh, gw = -(-h // stride), -(-w // stride)
    cell_of_px = (np.arange(h)[:, None] // stride) * gw + (np.arange(w)[None, :] // stride)
    max_id = int(labels_px.max())
    counts = np.bincount(
        (cell_of_px * (max_id + 1) + labels_px).ravel(), minlength=gh * gw * (max_id + 1)
    ).reshape(gh * gw, max_id + 1)
    pixels_per_cell = counts.sum(axis=1, keepdims=True)
    majority = counts.argmax(axis=1).astype(np.int32).reshape(gh, gw)
    occupancy = counts / pixels_per_cell
    soft = {
        obj_id: occupancy[:, obj_id].reshape(gh, gw)
        for obj_id in range(1, max_id + 1)
        if counts[:, obj_id].any()
    }
    return InstanceLabelMap(labels=majority, soft_masks=soft)


def load_label_maps(
    directory: str | Path, pattern: str = "frame_%05d.png", stride: int = 1
) -> list[InstanceLabelMap]:
    """Load per-frame 16-bit PNG label maps, sorted by index, downsampled to the grid."""
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFoundError(f"no such directory: {directory}")
    match = re.search(r"%(0?)(\d*)d", pattern)
    if match is None:
        raise InvalidInputError(f"pattern {pattern!r} has no %d placeholder")
    regex = re.compile(
        f"^{re.escape(pattern[: match.start()])}(\\d+){re.escape(pattern[match.end():])}$"
    )
    found = sorted(
        (int(m.group(1)), p) for p in directory.iterdir() if (m := regex.match(p.name))
    )
    if not found:
        raise NotFoundError(f"no label maps matching {pattern!r} in {directory}")
    maps = []
    for _, path in found:
        with Image.open(path) as img:
            arr = np.asarray(img, dtype=np.int64)
        if arr.ndim != 2:
            raise InvalidInputError(f"{path.name}: label maps must be single-channel")
        maps.append(downsample_label_map(arr, stride=stride))
    return maps


def save_label_map(labels_px: np.ndarray, path: str | Path) -> None:
    """Write a pixel-resolution label map as 16-bit grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(labels_px)
    if arr.min() < 0 or arr.max() > 65535:
        raise InvalidInputError("label ids must fit 16-bit unsigned")
    Image.fromarray(arr.astype(np.uint16)).save(path)


def _pair_iou(prev_masks: dict[int, np.ndarray], cur_masks: dict[int, np.ndarray]) -> list[tuple[float, int, int]]:
    pairs = []
    for pid, pmask in prev_masks.items():
        area_p = int(pmask.sum())
        for cid, cmask in cur_masks.items():
            inter = int(np.logical_and(pmask, cmask).sum())
            if inter == 0:
                continue
            union = area_p + int(cmask.sum()) - inter
            pairs.append((inter / union, pid, cid))
    return pairs


def track_instances(
    maps: Sequence[InstanceLabelMap], iou_threshold: float = DEFAULT_IOU_THRESHOLD
) -> list[InstanceLabelMap]:
    """Rename per-frame object ids into one consistent space.

    Adjacent frames are matched greedily by descending IoU of the hard label
    geometry; ties break toward the lower earlier-frame id, then the lower
    later-frame id. Matches at or above ``iou_threshold`` inherit the
    earlier id, everything else gets a fresh id. Geometry is never changed.
    """
    if not maps:
        raise InvalidInputError("need at least one label map")
    if not 0.0 < iou_threshold < 1.0:
        raise InvalidParameterError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    shape = maps[0].labels.shape
    for m in maps[1:]:
        if m.labels.shape != shape:
            raise DimensionError("all label maps must share grid dimensions")

    tag = uuid.uuid4().hex
    next_id = max((max(m.object_ids(), default=0) for m in maps), default=0) + 1

    out: list[InstanceLabelMap] = []
    prev_hard: dict[int, np.ndarray] = {}
    for pos, m in enumerate(maps):
        hard = {obj_id: m.labels == obj_id for obj_id in m.object_ids()}
        if pos == 0:
            rename = {obj_id: obj_id for obj_id in hard}
        else:
            rename = {}
            pairs = _pair_iou(prev_hard, hard)
            pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
            used_prev: set[int] = set()
            for iou, pid, cid in pairs:
                if iou < iou_threshold or pid in used_prev or cid in rename:
                    continue
                rename[cid] = pid
                used_prev.add(pid)
            for cid in hard:
                if cid not in rename:
                    rename[cid] = next_id
                    next_id += 1

        labels = np.zeros_like(m.labels)
        for old, new in rename.items():
            labels[m.labels == old] = new
        soft = {rename[old]: occ.copy() for old, occ in m.soft_masks.items() if old in rename}
        out.append(InstanceLabelMap(labels=labels, soft_masks=soft, track_space=tag))
        prev_hard = {rename[cid]: mask for cid, mask in hard.items()}
    return out


def build_instance_mask(
    target_map: InstanceLabelMap,
    ref_map: InstanceLabelMap,
    occupancy_threshold: float = DEFAULT_OCCUPANCY_THRESHOLD,
) -> TrackMask:
    """Relation allowing transfer only within the same tracked object.

    A target cell labeled k > 0 may draw from reference cells where object
    k's occupancy is at least ``occupancy_threshold``; background cells draw
    only from reference background. Objects absent from the reference yield
    empty rows, left to the downstream restriction fallback.
    """
    if target_map.labels.shape != ref_map.labels.shape:
        raise DimensionError(
            f"grids differ: {target_map.labels.shape} vs {ref_map.labels.shape}"
        )
    if target_map.track_space is None or target_map.track_space != ref_map.track_space:
        raise InvalidInputError(
            "maps come from different tracking passes; run track_instances over the sequence first"
        )
    n = target_map.labels.size
    target_ids = target_map.labels.ravel()

    ref_rows: dict[int, np.ndarray] = {0: (ref_map.labels.ravel() == 0)}
    for obj_id in np.unique(target_ids):
        if obj_id == 0:
            continue
        if obj_id in ref_map.soft_masks:
            occ = ref_map.soft_masks[obj_id].ravel()
            ref_rows[obj_id] = occ >= occupancy_threshold
        else:
            ref_rows[obj_id] = (ref_map.labels.ravel() == obj_id)

    bits = np.zeros((n, n), dtype=bool)
    for obj_id, row in ref_rows.items():
        bits[target_ids == obj_id] = row
    return TrackMask(bits=bits, origin="instance")
