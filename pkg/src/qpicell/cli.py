"""Command line entry point: ``qpicell <subcommand> [options]``.

Exit codes: 0 success, 1 stage failure, 2 invalid input or configuration
(including calibration problems).
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import __version__
from .config import PipelineConfig, load_config
from .errors import (CalibrationError, ConfigurationError, InvalidInputError, QpiError,
                     StageError)
from .pipeline import (METHODS, Run, cmd_analyze, cmd_features, cmd_pipeline, cmd_reconstruct,
                       cmd_segment, cmd_simulate, read_roi_file)

EXIT_OK, EXIT_STAGE, EXIT_INPUT = 0, 1, 2


def _common(p: argparse.ArgumentParser, out_required: bool):
    p.add_argument("--config", help="YAML pipeline configuration")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int, help="worker threads for per-nucleus stages")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpicell",
                                     description="Quantitative phase imaging of cell nuclei: "
                                                 "simulate, reconstruct, segment, measure, analyze.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate phantom nuclei, holograms and a calibration hologram")
    _common(p, out_required=False)

    p = sub.add_parser("reconstruct", help="recover unwrapped phase maps from the holograms")
    _common(p, out_required=True)
    p.add_argument("--method", choices=METHODS, default="opt")

    p = sub.add_parser("segment", help="nucleus masks from the brightfield images")
    _common(p, out_required=True)
    p.add_argument("--rois", help="CSV of image_id,cx,cy[,size] ROI centres")

    p = sub.add_parser("features", help="per-nucleus feature table")
    _common(p, out_required=True)
    p.add_argument("--method", choices=METHODS, default="opt")

    p = sub.add_parser("analyze", help="PCA, KMO, stability and silhouette report")
    _common(p, out_required=True)
    p.add_argument("--columns", choices=("all", "brightfield"), default="all")
    p.add_argument("--method", choices=METHODS, default="opt")

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _common(p, out_required=False)
    return parser


def _resolve_config(args) -> Optional[PipelineConfig]:
    cfg = load_config(args.config) if args.config else None
    if cfg is None and args.command in ("simulate", "pipeline"):
        cfg = PipelineConfig()
    if cfg is not None:
        cfg = cfg.replace(seed=args.seed, threads=args.threads, output_dir=args.out)
    return cfg


def _open_run(args, cfg: Optional[PipelineConfig]) -> Run:
    run = Run(args.out, cfg)
    if cfg is None and (args.seed is not None or args.threads is not None):
        run.cfg = run.cfg.replace(seed=args.seed, threads=args.threads)
    return run


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        if args.command == "simulate":
            run = cmd_simulate(cfg)
        elif args.command == "pipeline":
            run = cmd_pipeline(cfg)
        else:
            run = _open_run(args, cfg)
            if args.command == "reconstruct":
                cmd_reconstruct(run, args.method)
            elif args.command == "segment":
                cmd_segment(run, read_roi_file(args.rois) if args.rois else None)
            elif args.command == "features":
                cmd_features(run, args.method)
            elif args.command == "analyze":
                cmd_analyze(run, args.columns, args.method)
        run.finish()
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (InvalidInputError, ConfigurationError, CalibrationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except QpiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(f"{args.command}: ok ({run.root})")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
