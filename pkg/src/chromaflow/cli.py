"""Command-line entry point.

Subcommands: colorize, eval-psnr, eval-outlier, dense-track, synth,
inspect-features. Exit codes: 0 success, 1 usage error, 2 data error.
Long-running stages print machine-parsable ``STAGE <name> <i>/<n>`` lines.
"""

from __future__ import annotations

import argparse
import os
import struct
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import evalkit
from .dense_tracking import DenseParams, build_dense_mask
from .errors import ChromaflowError, InvalidParameterError
from .features import DEFAULT_STRIDE, STCF_MAGIC, extract_builtin, load_external
from .imaging import load_sequence, rgb_to_lab, resize_frame, save_sequence
from .instance_tracking import load_label_maps, save_label_map
from .pipeline import MASK_MODES, PipelineConfig, blend_baseline, colorize
from .refine import REFINER_KINDS
from .synth import FIXTURE_NAMES, generate_fixture

THREADS_ENV = "CHROMAFLOW_THREADS"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse parser that reports usage problems as exit code 1."""

    def error(self, message: str):  # noqa: D102
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV, "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _parse_ref(spec: str) -> tuple[int, str]:
    idx, sep, path = spec.partition("=")
    if not sep or not path:
        raise InvalidParameterError(f"--ref wants INDEX=PATH, got {spec!r}")
    try:
        return int(idx), path
    except ValueError as exc:
        raise InvalidParameterError(f"--ref index must be an integer, got {idx!r}") from exc


def _parse_resize(spec: str) -> Optional[tuple[int, int]]:
    if spec.lower() in ("none", "off"):
        return None
    w, sep, h = spec.partition("x")
    if not sep:
        raise InvalidParameterError(f"--resize wants WxH or 'none', got {spec!r}")
    return int(w), int(h)


def _parse_labeled_dir(spec: str) -> tuple[str, Path]:
    label, sep, path = spec.partition("=")
    if sep and path:
        return label, Path(path)
    return Path(spec).name or spec, Path(spec)


def _progress_printer():
    lock = threading.Lock()

    def report(stage: str, done: int, total: int) -> None:
        with lock:
            print(f"STAGE {stage} {done}/{total}", flush=True)

    return report


def _load_rasters(directory: Path, pattern: str) -> list[np.ndarray]:
    seq = load_sequence(directory, pattern)
    rasters = []
    for frame in seq.frames:
        from .imaging import lab_to_rgb

        if frame.ab is None:
            gray = np.round(frame.l * 2.55).astype(np.uint8)
            rasters.append(np.stack([gray] * 3, axis=-1))
        else:
            rasters.append(lab_to_rgb(frame))
    return rasters


def _load_binary_masks(directory: Path, pattern: str) -> list[np.ndarray]:
    from .instance_tracking import load_label_maps as _load

    maps = _load(directory, pattern, stride=1)
    return [m.labels > 0 for m in maps]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="chromaflow",
        description="Reference-based video colorization with spatiotemporal correspondence masks.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--pattern", default="frame_%05d.png", help="frame filename template")
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help=f"worker threads (default: ${THREADS_ENV} or CPU count)",
        )

    col = sub.add_parser(
        "colorize",
        help="colorize a grayscale frame directory from reference frames",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    col.add_argument("--input", required=True, help="directory of grayscale frames")
    col.add_argument("--out", required=True, help="output directory for colorized frames")
    col.add_argument(
        "--ref",
        action="append",
        default=None,
        metavar="INDEX=PATH",
        help="reference frame as INDEX=PATH; repeat for multiple references",
    )
    col.add_argument("--mode", default="none", choices=MASK_MODES, help="tracking mask mode")
    col.add_argument("--labels", default=None, help="directory of 16-bit instance label map PNGs")
    col.add_argument("--config", default=None, help="key = value config file mirroring these flags")
    col.add_argument("--stride", type=int, default=DEFAULT_STRIDE, help="pixels per feature cell")
    col.add_argument("--scales", default="2,4,8", help="builtin descriptor patch radii")
    col.add_argument("--temperature", type=float, default=1.0, help="softmax temperature")
    col.add_argument("--radius", type=int, default=9, help="propagation window radius R in cells")
    col.add_argument(
        "--binarize-threshold", type=float, default=0.2, help="candidate mass cutoff for dense tracking"
    )
    col.add_argument("--iou-threshold", type=float, default=0.3, help="instance association IoU cutoff")
    col.add_argument(
        "--occupancy-threshold", type=float, default=0.5, help="instance occupancy cutoff per cell"
    )
    col.add_argument("--features", default="builtin", help="feature source: builtin or stcf:PATH")
    col.add_argument("--refiner", default="temporal-blend", choices=REFINER_KINDS, help="refinement kind")
    col.add_argument("--blend-floor", type=float, default=0.25, help="minimum weight toward the warp")
    col.add_argument(
        "--fallback-confidence-factor",
        type=float,
        default=0.5,
        help="confidence damping for mask-fallback cells",
    )
    col.add_argument("--resize", default="384x216", help="working resolution WxH, or 'none'")
    col.add_argument(
        "--blend",
        default="none",
        choices=("none", "mean", "linear"),
        help="multi-reference baseline: blend per-reference outputs instead of stacking",
    )
    add_common(col)

    for name, extra in (("eval-psnr", "PSNR"), ("eval-outlier", "outlier rate")):
        ev = sub.add_parser(
            name,
            help=f"evaluate {extra} of prediction directories against ground truth",
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        ev.add_argument(
            "--pred",
            action="append",
            required=True,
            metavar="[LABEL=]DIR",
            help="prediction frame directory; repeat to compare methods",
        )
        ev.add_argument("--gt", required=True, help="ground-truth frame directory")
        ev.add_argument("--out", required=True, help="report output directory")
        if name == "eval-psnr":
            ev.add_argument("--masks", default=None, help="ground-truth binary instance mask PNGs")
        else:
            ev.add_argument(
                "--threshold", type=float, default=16.0, help="RGB distance outlier threshold"
            )
            ev.add_argument(
                "--sweep", default=None, help="comma-separated extra thresholds for a sweep figure"
            )
        add_common(ev)

    dt = sub.add_parser(
        "dense-track",
        help="propagate origin cells to a reference frame and dump candidate masks",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    dt.add_argument("--input", required=True, help="directory of frames")
    dt.add_argument("--frame", type=int, required=True, help="1-based target frame index")
    dt.add_argument("--ref-frame", type=int, required=True, help="1-based reference frame index")
    dt.add_argument(
        "--cell",
        action="append",
        required=True,
        metavar="ROW,COL",
        help="origin cell in grid coordinates; repeatable",
    )
    dt.add_argument("--out", required=True, help="output directory for mask PNGs")
    dt.add_argument("--stride", type=int, default=DEFAULT_STRIDE, help="pixels per feature cell")
    dt.add_argument("--scales", default="2,4,8", help="builtin descriptor patch radii")
    dt.add_argument("--radius", type=int, default=9, help="propagation window radius R in cells")
    dt.add_argument("--binarize-threshold", type=float, default=0.2, help="candidate mass cutoff")
    dt.add_argument("--temperature", type=float, default=1.0, help="softmax temperature")
    add_common(dt)

    sy = sub.add_parser(
        "synth",
        help="generate a synthetic fixture (gray + color frames + label maps)",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sy.add_argument("--fixture", required=True, choices=FIXTURE_NAMES, help="fixture name")
    sy.add_argument("--out", required=True, help="output directory")
    sy.add_argument("--width", type=int, default=96, help="frame width in pixels")
    sy.add_argument("--height", type=int, default=96, help="frame height in pixels")
    sy.add_argument("--frames", type=int, default=30, help="number of frames")
    sy.add_argument("--seed", type=int, default=0, help="generator seed")
    add_common(sy)

    ins = sub.add_parser(
        "inspect-features",
        help="validate and summarize an STCF file or builtin extraction",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    ins.add_argument("--stcf", default=None, help="STCF file to inspect")
    ins.add_argument("--input", default=None, help="frame directory for builtin extraction")
    ins.add_argument("--stride", type=int, default=DEFAULT_STRIDE, help="pixels per feature cell")
    ins.add_argument("--scales", default="2,4,8", help="builtin descriptor patch radii")
    add_common(ins)

    return parser


def _flag_given(argv: Sequence[str], name: str) -> bool:
    return any(arg == name or arg.startswith(name + "=") for arg in argv)


def _cmd_colorize(args, argv: Sequence[str]) -> int:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    refs_specs = tuple(_parse_ref(r) for r in args.ref) if args.ref else config.reference_specs
    if not refs_specs:
        raise InvalidParameterError("at least one --ref INDEX=PATH is required")
    from dataclasses import replace as dc_replace

    # explicit flags override the config file; untouched flags keep it
    overrides = {
        "--stride": ("stride", lambda: args.stride),
        "--scales": ("scales", lambda: tuple(int(s) for s in args.scales.replace(",", " ").split())),
        "--temperature": ("temperature", lambda: args.temperature),
        "--radius": ("radius", lambda: args.radius),
        "--binarize-threshold": ("binarize_threshold", lambda: args.binarize_threshold),
        "--iou-threshold": ("iou_threshold", lambda: args.iou_threshold),
        "--occupancy-threshold": ("occupancy_threshold", lambda: args.occupancy_threshold),
        "--mode": ("mask_mode", lambda: args.mode),
        "--refiner": ("refiner_kind", lambda: args.refiner),
        "--blend-floor": ("blend_floor", lambda: args.blend_floor),
        "--fallback-confidence-factor": (
            "fallback_confidence_factor",
            lambda: args.fallback_confidence_factor,
        ),
        "--features": ("feature_source", lambda: args.features),
        "--resize": ("resize", lambda: _parse_resize(args.resize)),
    }
    changes = {"reference_specs": refs_specs}
    for flag, (field, value) in overrides.items():
        if args.config is None or _flag_given(argv, flag):
            changes[field] = value()
    config = dc_replace(config, **changes)

    sequence = load_sequence(args.input, args.pattern)
    refs = []
    for idx, path in config.reference_specs:
        with Image.open(path) as img:
            ref = rgb_to_lab(np.asarray(img.convert("RGB")), index=idx)
        refs.append((idx, ref))
    if config.resize is not None:
        w, h = config.resize
        from .imaging import VideoSequence

        sequence = VideoSequence(
            frames=[resize_frame(f, w, h) for f in sequence.frames], fps=sequence.fps
        )
        refs = [(idx, resize_frame(ref, w, h)) for idx, ref in refs]

    label_maps = None
    if args.labels:
        label_maps = load_label_maps(args.labels, args.pattern, stride=config.stride)

    threads = args.threads if args.threads else _default_threads()
    progress = _progress_printer()

    if args.blend != "none":
        if len(refs) < 2:
            raise InvalidParameterError("--blend needs at least two references")
        outputs = []
        for idx, ref in refs:
            out, _ = colorize(sequence, [(idx, ref)], config, label_maps, threads, progress)
            outputs.append((idx, out))
        result = blend_baseline(outputs, weighting=args.blend)
    else:
        result, _ = colorize(sequence, refs, config, label_maps, threads, progress)

    paths = save_sequence(result, args.out, args.pattern)
    print(f"wrote {len(paths)} frames to {args.out}")
    return 0


def _eval_inputs(args) -> tuple[list[tuple[str, list[np.ndarray]]], list[np.ndarray]]:
    preds = []
    for spec in args.pred:
        label, directory = _parse_labeled_dir(spec)
        preds.append((label, _load_rasters(directory, args.pattern)))
    gt = _load_rasters(Path(args.gt), args.pattern)
    for label, frames in preds:
        if len(frames) != len(gt):
            raise InvalidParameterError(f"{label}: {len(frames)} frames vs {len(gt)} ground truth")
    return preds, gt


def _cmd_eval_psnr(args) -> int:
    preds, gt = _eval_inputs(args)
    masks = _load_binary_masks(Path(args.masks), args.pattern) if args.masks else None
    out_dir = Path(args.out)
    all_reports = []
    table: dict[str, dict[str, float]] = {}
    full_by_label: dict[str, evalkit.MetricReport] = {}
    for label, frames in preds:
        reports = evalkit.psnr_report(frames, gt, masks, video=label)
        all_reports.extend(reports)
        table[label] = {r.region.capitalize(): r.mean for r in reports}
        full_by_label[label] = reports[0]
        print(f"STAGE eval {len(full_by_label)}/{len(preds)}")
    evalkit.write_csv(all_reports, out_dir / "psnr.csv")
    evalkit.write_markdown_table(table, out_dir / "psnr.md", title="PSNR (dB), higher is better")
    evalkit.render_per_frame_figure(full_by_label, out_dir / "psnr_per_frame.png", ylabel="PSNR (dB)")
    for label, cells in table.items():
        summary = "  ".join(f"{k}={v:.2f}" for k, v in cells.items())
        print(f"{label}: {summary}")
    return 0


def _cmd_eval_outlier(args) -> int:
    preds, gt = _eval_inputs(args)
    thresholds = [args.threshold]
    if args.sweep:
        thresholds = sorted({float(v) for v in args.sweep.replace(",", " ").split()} | {args.threshold})
    out_dir = Path(args.out)
    all_reports = []
    table: dict[str, dict[str, float]] = {}
    sweeps: dict[str, list[evalkit.MetricReport]] = {}
    for label, frames in preds:
        reports = evalkit.outlier_sweep(frames, gt, thresholds, video=label)
        all_reports.extend(reports)
        sweeps[label] = reports
        table[label] = {f"thr={r.threshold:g}": r.mean for r in reports}
        print(f"STAGE eval {len(sweeps)}/{len(preds)}")
    evalkit.write_csv(all_reports, out_dir / "outlier.csv")
    evalkit.write_markdown_table(table, out_dir / "outlier.md", title="% Outlier, lower is better")
    if len(thresholds) > 1:
        evalkit.render_sweep_figure(sweeps, out_dir / "outlier_sweep.png")
    else:
        per_frame = {label: reports[0] for label, reports in sweeps.items()}
        evalkit.render_per_frame_figure(per_frame, out_dir / "outlier_per_frame.png", ylabel="% outlier")
    for label, cells in table.items():
        summary = "  ".join(f"{k}: {v:.2f}%" for k, v in cells.items())
        print(f"{label}: {summary}")
    return 0


def _cmd_dense_track(args) -> int:
    sequence = load_sequence(args.input, args.pattern)
    n = len(sequence)
    if not (1 <= args.frame <= n and 1 <= args.ref_frame <= n):
        raise InvalidParameterError(f"--frame/--ref-frame must lie in 1..{n}")
    scales = tuple(int(s) for s in args.scales.replace(",", " ").split())
    params = DenseParams(
        radius=args.radius, binarize_threshold=args.binarize_threshold, temperature=args.temperature
    )
    step = 1 if args.ref_frame >= args.frame else -1
    chain = list(range(args.frame, args.ref_frame + step, step))
    grids = [
        extract_builtin(sequence[f - 1], stride=args.stride, scales=scales) for f in chain
    ]
    print(f"STAGE features {len(chain)}/{len(chain)}")
    mask = build_dense_mask(grids, params, frame_indices=chain)
    gh, gw = grids[0].grid_h, grids[0].grid_w
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, spec in enumerate(args.cell, start=1):
        row_s, _, col_s = spec.partition(",")
        row, col = int(row_s), int(col_s)
        if not (0 <= row < gh and 0 <= col < gw):
            raise InvalidParameterError(f"cell {spec!r} outside the {gh}x{gw} grid")
        bits = mask.bits[row * gw + col].reshape(gh, gw)
        img = np.where(bits, 255, 0).astype(np.uint8)
        img = np.repeat(np.repeat(img, args.stride, axis=0), args.stride, axis=1)
        path = out_dir / f"cell_{row:03d}_{col:03d}.png"
        Image.fromarray(img, mode="L").save(path)
        print(f"STAGE dump {k}/{len(args.cell)}")
        print(f"{path}: {int(bits.sum())} candidate cells")
    return 0


def _cmd_synth(args) -> int:
    fixture = generate_fixture(
        args.fixture, width=args.width, height=args.height, n_frames=args.frames, seed=args.seed
    )
    out = Path(args.out)
    save_sequence(fixture.gray, out / "gray", args.pattern)
    save_sequence(fixture.color, out / "color", args.pattern)
    for i, labels in enumerate(fixture.labels_px, start=1):
        save_label_map(labels, out / "labels" / (args.pattern % i))
    print(f"STAGE synth {args.frames}/{args.frames}")
    print(f"wrote fixture {args.fixture!r} ({args.frames} frames) to {out}")
    return 0


def _cmd_inspect_features(args) -> int:
    if bool(args.stcf) == bool(args.input):
        raise InvalidParameterError("pass exactly one of --stcf or --input")
    if args.stcf:
        grids = load_external(args.stcf)
        data = np.stack([g.data for g in grids])
        print(f"stcf: magic={STCF_MAGIC.decode()} version=1")
        print(f"frames={len(grids)} grid={grids[0].grid_w}x{grids[0].grid_h} channels={grids[0].channels}")
        print(f"min={data.min():.6g} max={data.max():.6g} mean={data.mean():.6g}")
        return 0
    sequence = load_sequence(args.input, args.pattern)
    scales = tuple(int(s) for s in args.scales.replace(",", " ").split())
    grid = extract_builtin(sequence[0], stride=args.stride, scales=scales)
    print(
        f"builtin: frames={len(sequence)} grid={grid.grid_w}x{grid.grid_h} "
        f"channels={grid.channels} stride={grid.stride}"
    )
    print(f"min={grid.data.min():.6g} max={grid.data.max():.6g} mean={grid.data.mean():.6g}")
    return 0


_COMMANDS = {
    "eval-psnr": _cmd_eval_psnr,
    "eval-outlier": _cmd_eval_outlier,
    "dense-track": _cmd_dense_track,
    "synth": _cmd_synth,
    "inspect-features": _cmd_inspect_features,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        if args.command == "colorize":
            return _cmd_colorize(args, argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except InvalidParameterError as exc:
        print(f"chromaflow: {exc}", file=sys.stderr)
        return 1
    except (ChromaflowError, OSError, struct.error) as exc:
        print(f"chromaflow: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
