"""Command-line entry point.

Subcommands mirror the pipeline stages; one config file plus a few
override flags drives everything. Exit codes: 0 success, 1 validation or
format error, 2 missing input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import pipeline
from .config import load_config, parse_config_text
from .errors import (FormatError, KforgeError, MissingInputError,
                     NumericalError, ValidationError)


def _common_flags(parser):
    parser.add_argument("--config", default=None,
                        help="pipeline config file (key = value lines)")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides config and KFORGE_SEED)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--video-dir", default=None,
                        help="directory of per-video frame folders")
    parser.add_argument("--jobs", type=int, default=None,
                        help="parallel workers over videos")
    parser.add_argument("--emit-figures", action="store_true",
                        help="write PNG frame strips and y-t profiles")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kforge",
        description="Simulate dynamic multi-coil k-space from videos, "
                    "undersample it, reconstruct, score, and export "
                    "training datasets.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate k-space for every video")
    _common_flags(p)

    p = sub.add_parser("traj", help="write sampling trajectory files")
    _common_flags(p)

    p = sub.add_parser("recon", help="reconstruct undersampled data")
    _common_flags(p)
    p.add_argument("--sampling", default="all",
                   choices=["cartesian", "radial", "spiral", "full", "all"],
                   help="sampling scheme (default: all configured)")
    p.add_argument("--method", default=None, choices=["zf", "cs", "all"],
                   help="reconstruction method (default: from config)")

    p = sub.add_parser("evaluate", help="rank statistics over the metrics CSV")
    _common_flags(p)

    p = sub.add_parser("export", help="write training records and manifest")
    _common_flags(p)

    p = sub.add_parser("all", help="simulate, traj, recon both methods, "
                                   "evaluate, export")
    _common_flags(p)
    return parser


def _config_from_args(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    elif "KFORGE_SEED" in os.environ:
        file_has_seed = False
        if args.config and os.path.isfile(args.config):
            with open(args.config) as fh:
                file_has_seed = "seed" in parse_config_text(fh.read(),
                                                            args.config)
        if not file_has_seed:
            try:
                overrides["seed"] = int(os.environ["KFORGE_SEED"])
            except ValueError as exc:
                raise ValidationError(
                    f"KFORGE_SEED is not an integer: "
                    f"{os.environ['KFORGE_SEED']!r}") from exc
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.video_dir is not None:
        overrides["video_dir"] = args.video_dir
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.emit_figures:
        overrides["emit_figures"] = True
    return load_config(args.config, overrides)


def _cmd_simulate(cfg, args):
    vids = pipeline.run_simulate(cfg)
    print(f"simulated {len(vids)} videos -> {pipeline.sim_dir(cfg)}")


def _cmd_traj(cfg, args):
    summary = pipeline.run_traj(cfg)
    print(f"trajectories for {summary['frames']} frames -> "
          f"{pipeline.traj_dir(cfg)}")
    print(f"  cartesian: {summary['cartesian_lines_per_frame']} lines/frame")
    print(f"  radial: {summary['radial_spokes']} spokes x "
          f"{summary['radial_samples_per_spoke']} samples")
    print(f"  spiral: {summary['spiral_arms']} arms x "
          f"{summary['spiral_samples_per_arm']} samples")


def _cmd_recon(cfg, args):
    schemes = None if args.sampling == "all" else [args.sampling]
    if args.method == "all":
        methods = ["zf", "cs"]
    elif args.method is not None:
        methods = [args.method]
    else:
        methods = None
    rows = pipeline.run_recon(cfg, schemes=schemes, methods=methods)
    print(f"reconstructed {len(rows)} (video, scheme, method) combinations; "
          f"metrics -> {pipeline.metrics_path(cfg)}")


def _cmd_evaluate(cfg, args):
    stats = pipeline.run_evaluate(cfg)
    print(f"methods: {', '.join(stats['methods'])} over "
          f"{len(stats['datasets'])} paired datasets")
    for metric, block in stats["metrics"].items():
        if block.get("note"):
            print(f"  {metric}: {block['note']}")
            continue
        ranks = ", ".join(
            f"{m}={r:.2f}" for m, r in zip(stats["methods"],
                                           block["mean_ranks"]))
        print(f"  {metric}: friedman {block['statistic']:.3f} "
              f"(p={block['p_value']:.3g}); mean ranks {ranks}")
    print(f"stats -> {pipeline.stats_path(cfg)}")


def _cmd_export(cfg, args):
    manifest = pipeline.run_export(cfg)
    print(f"exported {len(manifest['records'])} records -> "
          f"{pipeline.export_dir(cfg)}")


def _cmd_all(cfg, args):
    result = pipeline.run_all(cfg)
    print(f"pipeline complete: {len(result['videos'])} videos, "
          f"{result['n_export_records']} export records -> {cfg.out_dir}")


_COMMANDS = {
    "simulate": _cmd_simulate,
    "traj": _cmd_traj,
    "recon": _cmd_recon,
    "evaluate": _cmd_evaluate,
    "export": _cmd_export,
    "all": _cmd_all,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        _COMMANDS[args.command](cfg, args)
    except (ValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except KforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
