"""Command-line interface.

Subcommands mirror the pipeline stages (`run` is exactly their composition)
plus `gen-scene` for synthetic test data and `evaluate` for scoring a run
against a generated scene. Exit codes: 0 success, 1 usage/config error,
2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegenerateGeometryError,
    EmptyInputError,
    EmptyMeshError,
    InvalidInputError,
    PipelineStageError,
    PlyParseError,
)
from .fileio import (
    SequenceManifest,
    read_cloud,
    read_dataset_index,
    read_mesh,
    read_trajectory,
    write_cloud,
    write_manifest,
    write_mesh,
    write_trajectory,
)
from .labels import LabelConfig
from .pipeline import (
    PipelineConfig,
    beam_model_from_preset,
    load_config,
    read_labels,
    run_pipeline,
    stage_accumulate,
    stage_export,
    stage_label,
    stage_mesh,
    stage_odometry,
    stage_synthesize,
)
from .scene import BpaConfig
from .synthesis import NoiseConfig, default_beam_model, offset_pose
from .testbed import coverage_comparison, evaluate_pipeline, generate_scene, simulate_sequence

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_DATA_ERRORS = (InvalidInputError, EmptyInputError, DegenerateGeometryError,
                EmptyMeshError, PlyParseError, OSError, IndexError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _config_args(sub):
    sub.add_argument("--config", help="INI config file")
    sub.add_argument("--manifest", help="scan sequence manifest")
    sub.add_argument("--output-dir", dest="output_dir", help="artifact directory")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--workers", type=int, help="worker count (never changes outputs)")
    sub.add_argument("--offsets", help="lateral offsets: 'lo:hi:count' or comma list")
    sub.add_argument("--preset", help="sensor preset name")


def _build_config(args) -> PipelineConfig:
    overrides = {k: getattr(args, k) for k in
                 ("manifest", "output_dir", "seed", "workers", "offsets", "preset")
                 if getattr(args, k, None) is not None}
    return load_config(args.config, overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="lidarsynth",
                     description="Off-trajectory LiDAR scan synthesis pipeline")
    subs = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("run", "run the full pipeline"),
        ("odometry", "estimate the trajectory from the scan sequence"),
        ("accumulate", "fuse scans into the world frame"),
        ("mesh", "reconstruct a triangle mesh from the fused cloud"),
        ("label", "generate waypoint labels"),
        ("synthesize", "ray cast scans at the lateral viewpoints"),
        ("export", "crop and export the labeled dataset"),
    ]:
        sub = subs.add_parser(name, help=help_text)
        _config_args(sub)
        if name == "label":
            sub.add_argument("--dump", action="store_true",
                             help="print a readable label table")

    gen = subs.add_parser("gen-scene", help="generate a synthetic test scene")
    gen.add_argument("--kind", choices=["straight", "arc", "s-curve"], default="straight")
    gen.add_argument("--length", type=float, default=49.0)
    gen.add_argument("--lane-width", type=float, default=3.5)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--preset", default="default-64")
    gen.add_argument("--sigma", type=float, default=0.02)
    gen.add_argument("--drop", type=float, default=0.2)

    ev = subs.add_parser("evaluate", help="score a pipeline run against a scene")
    ev.add_argument("--scene", required=True, help="gen-scene output directory")
    ev.add_argument("--run", required=True, help="pipeline output directory")
    ev.add_argument("--report", help="write the JSON report here")
    ev.add_argument("--coverage", action="store_true",
                    help="also compare single-scan vs accumulated coverage")
    ev.add_argument("--frame-skip", dest="frame_skip", type=int,
                    help="label frame skip used by the run (default: run report, else 5)")
    ev.add_argument("--workers", type=int, default=1)
    return parser


def _cmd_stage(args, stage_fn):
    cfg = _build_config(args)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = stage_fn(cfg)
    print(path)
    return EXIT_OK


def _cmd_label(args):
    cfg = _build_config(args)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = stage_label(cfg)
    if args.dump:
        for t, off, wp in read_labels(path):
            cells = " ".join(f"({x:7.2f},{y:7.2f})" for x, y in wp)
            print(f"t={t:4d} offset={off:+.1f}  {cells}")
    else:
        print(path)
    return EXIT_OK


def _cmd_run(args):
    cfg = _build_config(args)
    result = run_pipeline(cfg)
    print(result.index_path)
    print(json.dumps(result.report["counts"], indent=2), file=sys.stderr)
    return EXIT_OK


def _cmd_gen_scene(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(args.kind, args.length, args.lane_width, args.seed)
    model = beam_model_from_preset(args.preset)
    noise = NoiseConfig(sigma=args.sigma, drop_probability=args.drop, seed=args.seed)
    seq = simulate_sequence(scene, model, noise)

    scan_dir = out / "scans"
    scan_dir.mkdir(exist_ok=True)
    paths = []
    for t, scan in enumerate(seq.scans):
        rel = Path("scans") / f"scan_{t:04d}.ply"
        write_cloud(scan, out / rel, format="binary")
        paths.append(rel)
    write_manifest(SequenceManifest(tuple(paths), seq.frequency_hz, args.preset),
                   out / "manifest.txt")
    write_mesh(scene.mesh, out / "scene_mesh.ply", format="binary")
    write_trajectory(list(scene.trajectory), out / "gt_trajectory.txt")
    (out / "scene_params.json").write_text(json.dumps({
        "kind": args.kind, "length": args.length, "lane_width": args.lane_width,
        "seed": args.seed, "preset": args.preset,
        "sigma": args.sigma, "drop": args.drop,
    }, indent=2) + "\n", encoding="utf-8")
    print(out / "manifest.txt")
    return EXIT_OK


def load_scene_dir(scene_dir):
    """Rebuild the analytic scene from a gen-scene output directory."""
    params_path = Path(scene_dir) / "scene_params.json"
    if not params_path.exists():
        raise InvalidInputError(f"missing {params_path}")
    params = json.loads(params_path.read_text(encoding="utf-8"))
    scene = generate_scene(params["kind"], params["length"], params["lane_width"],
                           params["seed"])
    return scene, params


def _cmd_evaluate(args):
    scene, params = load_scene_dir(args.scene)
    run_dir = Path(args.run)
    for artifact in ("trajectory.txt", "mesh.ply", "labels.txt"):
        if not (run_dir / artifact).exists():
            raise InvalidInputError(f"missing pipeline artifact {run_dir / artifact}")
    trajectory = read_trajectory(run_dir / "trajectory.txt")
    mesh = read_mesh(run_dir / "mesh.ply")

    frame_skip = args.frame_skip
    if frame_skip is None:
        report_path = run_dir / "run_report.json"
        if report_path.exists():
            frame_skip = json.loads(report_path.read_text()).get(
                "config", {}).get("frame_skip")
    label_cfg = LabelConfig(frame_skip=frame_skip or 5)

    samples = []
    sample_poses = []
    for t, off, wp in read_labels(run_dir / "labels.txt"):
        cloud_path = run_dir / "synth" / f"seq0_t{t}_off{off:+.1f}.ply"
        if not cloud_path.exists():
            raise InvalidInputError(f"missing synthesized scan {cloud_path}")
        samples.append((t, off, read_cloud(cloud_path), wp))
        sample_poses.append(offset_pose(trajectory[t], off))

    report = evaluate_pipeline(scene, trajectory=trajectory, mesh=mesh,
                               samples=samples, sample_poses=sample_poses,
                               label_cfg=label_cfg)
    if args.coverage:
        from .fileio import load_sequence, read_manifest

        manifest = read_manifest(Path(args.scene) / "manifest.txt")
        seq = load_sequence(manifest)
        model = beam_model_from_preset(params.get("preset", "default-64"))
        ratios = coverage_comparison(scene, seq, scene.trajectory,
                                     BpaConfig(radii=(0.15, 0.3), dedup_voxel=0.1),
                                     model, workers=args.workers)
        report["coverage"] = {str(k): v for k, v in ratios.items()}
    text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    handlers = {
        "run": _cmd_run,
        "odometry": lambda a: _cmd_stage(a, stage_odometry),
        "accumulate": lambda a: _cmd_stage(a, stage_accumulate),
        "mesh": lambda a: _cmd_stage(a, stage_mesh),
        "label": _cmd_label,
        "synthesize": lambda a: _cmd_stage(a, stage_synthesize),
        "export": lambda a: _cmd_stage(a, stage_export),
        "gen-scene": _cmd_gen_scene,
        "evaluate": _cmd_evaluate,
    }
    try:
        return handlers[args.command](args)
    except (_UsageError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineStageError as exc:
        code = EXIT_DATA if isinstance(exc.cause, _DATA_ERRORS) else EXIT_INTERNAL
        print(f"error: {exc}", file=sys.stderr)
        return code
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything unexpected
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
