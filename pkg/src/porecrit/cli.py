"""Command-line entry point: ``porecrit <subcommand> [--config PATH] [overrides]``.

Precedence for settings is flags > config file > built-in defaults. The
default config is the synthetic reference run (500 planted pores).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import RunConfig
from .errors import ConfigError, PoreCritError
from .stages import STAGES, run_pipeline, run_stage

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

logger = logging.getLogger("porecrit")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--output-dir", metavar="PATH", help="directory for all stage outputs")
    common.add_argument("--seed", type=int, metavar="N", help="override every named seed")
    common.add_argument("--threshold", type=int, metavar="N", help="fixed intensity threshold (0-255)")
    common.add_argument("--percentile", type=float, metavar="P", help="network edge percentile (0-100]")
    common.add_argument("--surface-mode", choices=("boundary_component", "bbox_faces"))
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")

    parser = argparse.ArgumentParser(
        prog="porecrit",
        description="Pore detection, proximity network, criticality model and exact SHAP attributions "
                    "for 3D tomographic volumes.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "synth": "write a synthetic PGM stack and its ground truth",
        "segment": "threshold, label and size-filter the volume",
        "features": "compute per-pore descriptors",
        "network": "build and export the proximity network",
        "train": "label, split and train the boosted-tree model",
        "explain": "exact Shapley attributions, plots and summary",
        "pipeline": "run every stage in order",
        "show-config": "print the effective configuration as JSON",
    }
    for name in STAGES + ("pipeline", "show-config"):
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
    return cfg.with_overrides(
        output_dir=args.output_dir,
        seed=args.seed,
        threshold=args.threshold,
        percentile=args.percentile,
        surface_mode=args.surface_mode,
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"porecrit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "show-config":
        sys.stdout.write(cfg.to_json())
        return EXIT_OK

    stage = args.command
    try:
        if stage == "pipeline":
            run_pipeline(cfg)
        else:
            run_stage(stage, cfg)
    except ConfigError as exc:
        print(f"porecrit: stage {stage}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PoreCritError, OSError) as exc:
        print(f"porecrit: stage {stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort reporting for the exit-code contract
        logger.exception("internal error")
        print(f"porecrit: stage {stage}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
