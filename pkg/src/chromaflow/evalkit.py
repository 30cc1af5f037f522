"""Quantitative evaluation: region-split PSNR and outlier-rate metrics.

PSNR is computed on 8-bit RGB rasters over the full frame or inside/outside
ground-truth instance masks; the outlier rate counts pixels whose RGB
Euclidean error strictly exceeds a threshold. Report writers emit per-frame
CSV rows, a Markdown summary table, and matplotlib figures next to them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, InvalidInputError, InvalidParameterError, UndefinedRegionError

PSNR_CAP_DB = 99.0
DEFAULT_OUTLIER_THRESHOLD = 16.0


@dataclass
class RegionSpec:
    """Which pixels a metric covers: the full frame, inside the ground-truth
    instance union, or outside it."""

    kind: str = "full"
    mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind not in ("full", "inner", "outer"):
            raise InvalidParameterError(f"unknown region kind {self.kind!r}")
        if self.kind != "full" and self.mask is None:
            raise InvalidInputError(f"region {self.kind!r} requires an instance mask")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)

    def select(self, shape: tuple[int, int]) -> np.ndarray:
        if self.kind == "full":
            return np.ones(shape, dtype=bool)
        if self.mask.shape != shape:
            raise DimensionError(f"region mask {self.mask.shape} does not match frame {shape}")
        return self.mask if self.kind == "inner" else ~self.mask


@dataclass
class MetricReport:
    """Per-frame metric values for one video plus their mean."""

    metric: str
    per_frame: list[float]
    region: str = "full"
    threshold: Optional[float] = None
    video: str = ""

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_frame))


def aggregate_mean(reports: Sequence[MetricReport]) -> float:
    """Mean over per-video means (each video weighted equally)."""
    if not reports:
        raise InvalidInputError("no reports to aggregate")
    return float(np.mean([r.mean for r in reports]))


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} does not match ground truth {gt.shape}")
    if pred.ndim != 3 or pred.shape[2] != 3:
        raise InvalidInputError(f"expected (H, W, 3) rasters, got {pred.shape}")
    return pred.astype(np.float64), gt.astype(np.float64)


def mse(pred: np.ndarray, gt: np.ndarray, region: RegionSpec = RegionSpec()) -> float:
    """Mean squared RGB error over the region's pixels."""
    p, g = _check_pair(pred, gt)
    sel = region.select(p.shape[:2])
    count = int(sel.sum())
    if count == 0:
        raise UndefinedRegionError(f"region {region.kind!r} selects no pixels")
    diff = p[sel] - g[sel]
    return float(np.mean(diff * diff))


def psnr(pred: np.ndarray, gt: np.ndarray, region: RegionSpec = RegionSpec()) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for identical regions."""
    err = mse(pred, gt, region)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(255.0**2 / err), PSNR_CAP_DB)


def outlier_rate(pred: np.ndarray, gt: np.ndarray, threshold: float = DEFAULT_OUTLIER_THRESHOLD) -> float:
    """Percentage of pixels whose RGB Euclidean error strictly exceeds the threshold."""
    p, g = _check_pair(pred, gt)
    dist = np.sqrt(np.sum((p - g) ** 2, axis=2))
    return float(100.0 * np.count_nonzero(dist > threshold) / dist.size)


def psnr_report(
    pred_frames: Sequence[np.ndarray],
    gt_frames: Sequence[np.ndarray],
    instance_masks: Optional[Sequence[np.ndarray]] = None,
    video: str = "",
) -> list[MetricReport]:
    """Full / inner / outer PSNR per frame (regions only when masks exist)."""
    if len(pred_frames) != len(gt_frames):
        raise InvalidInputError(f"{len(pred_frames)} predictions vs {len(gt_frames)} ground truths")
    if instance_masks is not None and len(instance_masks) != len(pred_frames):
        raise InvalidInputError("need one instance mask per frame")
    kinds = ["full"] if instance_masks is None else ["full", "inner", "outer"]
    reports = []
    for kind in kinds:
        values = []
        for i, (p, g) in enumerate(zip(pred_frames, gt_frames)):
            mask = None if instance_masks is None else instance_masks[i]
            values.append(psnr(p, g, RegionSpec(kind=kind, mask=mask)))
        reports.append(MetricReport(metric="psnr", per_frame=values, region=kind, video=video))
    return reports


def outlier_sweep(
    pred_frames: Sequence[np.ndarray],
    gt_frames: Sequence[np.ndarray],
    thresholds: Sequence[float],
    video: str = "",
) -> list[MetricReport]:
    """One outlier-rate report per threshold; rates are non-increasing in the threshold."""
    if len(pred_frames) != len(gt_frames):
        raise InvalidInputError(f"{len(pred_frames)} predictions vs {len(gt_frames)} ground truths")
    if not thresholds:
        raise InvalidParameterError("need at least one threshold")
    reports = []
    for thr in thresholds:
        values = [outlier_rate(p, g, thr) for p, g in zip(pred_frames, gt_frames)]
        reports.append(
            MetricReport(metric="outlier", per_frame=values, threshold=float(thr), video=video)
        )
    return reports


def write_csv(reports: Sequence[MetricReport], path: str | Path) -> Path:
    """Per-frame rows: video, frame, metric, region, threshold, value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video", "frame", "metric", "region", "threshold", "value"])
        for report in reports:
            thr = "" if report.threshold is None else f"{report.threshold:g}"
            for frame_no, value in enumerate(report.per_frame, start=1):
                writer.writerow(
                    [report.video, frame_no, report.metric, report.region, thr, f"{value:.6f}"]
                )
    return path


def write_markdown_table(
    rows: dict[str, dict[str, float]], path: str | Path, title: str = ""
) -> Path:
    """Method-by-column summary table (one row per labeled run)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns: list[str] = []
    for cells in rows.values():
        for col in cells:
            if col not in columns:
                columns.append(col)
    lines = []
    if title:
        lines.append(f"# {title}")
        lines.append("")
    lines.append("| Method | " + " | ".join(columns) + " |")
    lines.append("|" + "---|" * (len(columns) + 1))
    for method, cells in rows.items():
        rendered = [f"{cells[c]:.2f}" if c in cells else "-" for c in columns]
        lines.append(f"| {method} | " + " | ".join(rendered) + " |")
    path.write_text("\n".join(lines) + "\n")
    return path


def render_per_frame_figure(
    labeled_reports: dict[str, MetricReport], path: str | Path, ylabel: str
) -> Path:
    """Per-frame metric curves, one line per labeled run."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, report in labeled_reports.items():
        ax.plot(range(1, len(report.per_frame) + 1), report.per_frame, label=label)
    ax.set_xlabel("frame")
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_sweep_figure(
    labeled_sweeps: dict[str, Sequence[MetricReport]], path: str | Path
) -> Path:
    """Outlier rate versus threshold, one curve per labeled run."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, reports in labeled_sweeps.items():
        thresholds = [r.threshold for r in reports]
        rates = [r.mean for r in reports]
        ax.plot(thresholds, rates, marker="o", label=label)
    ax.set_xlabel("threshold (RGB distance)")
    ax.set_ylabel("% outlier")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
