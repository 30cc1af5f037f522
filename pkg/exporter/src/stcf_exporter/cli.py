"""Command line: export CNN features of a frame directory to an STCF file."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .backbone import DEFAULT_TAPS, MissingWeightsError
from .exporter import ExportDataError, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stcf-export",
        description="Run a pretrained CNN over grayscale frames and write an STCF feature file.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--input", required=True, help="directory of frame PNGs")
    parser.add_argument("--out", required=True, help="output STCF path")
    parser.add_argument("--stride", type=int, default=4, help="pixels per feature grid cell")
    parser.add_argument(
        "--layers",
        default=",".join(str(t) for t in DEFAULT_TAPS),
        help="comma-separated VGG19 feature indices to tap",
    )
    parser.add_argument(
        "--weights",
        default=None,
        help="local VGG19 feature state_dict; omitting it tries the torchvision download",
    )
    parser.add_argument("--pattern", default="frame_%05d.png", help="frame filename template")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    taps = tuple(int(v) for v in args.layers.replace(",", " ").split())
    job = ExportJob(
        input_dir=args.input,
        output_path=args.out,
        stride=args.stride,
        taps=taps,
        weights=args.weights,
        pattern=args.pattern,
    )
    try:
        path = export(job)
    except MissingWeightsError as exc:
        print(f"stcf-export: environment error: {exc}", file=sys.stderr)
        return 3
    except (ExportDataError, OSError, ValueError) as exc:
        print(f"stcf-export: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
