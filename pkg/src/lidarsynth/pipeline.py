"""End-to-end orchestration: odometry -> fuse -> mesh -> labels -> synthesis -> export.

`run_pipeline` is literally the composition of the stage functions, each of
which consumes and produces file artifacts in the output directory, so
chaining the stage subcommands is byte-identical to one monolithic run. A
`.partial` marker sits in the output directory while a run is incomplete.

Stage artifacts:
    trajectory.txt      estimated world-to-sensor poses (12 floats per line)
    fused.ply           world-frame accumulated cloud
    mesh.ply            ball-pivoting reconstruction
    labels.txt          one label row per (timestep, offset)
    synth/*.ply         full-360 synthesized scans, sensor frame, noise applied
    dataset/index.txt   exported samples (frontal crop) + label index
    run_report.json     timings and per-stage counts (not byte-stable)
"""

from __future__ import annotations

import configparser
import json
import math
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .bvh import BvhIndex
from .errors import ConfigError, InvalidInputError, PipelineStageError
from .fileio import (
    DatasetSample,
    export_dataset,
    load_sequence,
    read_cloud,
    read_manifest,
    read_mesh,
    read_trajectory,
    write_cloud,
    write_mesh,
    write_trajectory,
)
from .geometry import PointCloud
from .labels import LabelConfig, PidConfig, offset_label, reference_label
from .odometry import IcpConfig, OdometryConfig, Trajectory, estimate_trajectory
from .scene import BpaConfig, accumulate, mesh_stats, reconstruct_mesh
from .spatial import voxel_downsample
from .synthesis import (
    BeamModel,
    NoiseConfig,
    apply_noise,
    default_beam_model,
    log_spaced_elevations,
    offset_pose,
    synthesize_scan,
)

_NOISE_STREAM_SYNTH = 2


def load_sensor_presets() -> dict:
    with resources.files("lidarsynth").joinpath("sensor_presets.json").open() as fh:
        return json.load(fh)


def beam_model_from_preset(name: str) -> BeamModel:
    presets = load_sensor_presets()
    if name not in presets:
        raise ConfigError(f"unknown sensor preset {name!r}; have {sorted(presets)}")
    p = presets[name]
    if p["pattern"] == "log":
        elev = log_spaced_elevations(p["channels"], p["elevation_min"],
                                     p["elevation_max"], sign=p.get("sign", "down"))
    else:
        elev = np.linspace(p["elevation_min"], p["elevation_max"], p["channels"])
    return BeamModel(p["azimuth_count"], elev, p["max_range"])


@dataclass(frozen=True)
class PipelineConfig:
    manifest: Path
    output_dir: Path
    odometry: OdometryConfig = OdometryConfig()
    bpa: BpaConfig = BpaConfig()
    beam: BeamModel = field(default_factory=default_beam_model)
    offsets: tuple = tuple(np.linspace(-2.0, 2.0, 11))
    labels: LabelConfig = LabelConfig()
    noise: NoiseConfig = NoiseConfig()
    pid: PidConfig = PidConfig()
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "manifest", Path(self.manifest))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        object.__setattr__(self, "offsets", tuple(float(o) for o in self.offsets))
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def _parse_offsets(text: str) -> tuple:
    """Either 'lo:hi:count' or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        lo, hi, count = text.split(":")
        return tuple(np.linspace(float(lo), float(hi), int(count)))
    return tuple(float(tok) for tok in text.split(","))


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig from an INI file plus CLI overrides.

    Precedence: overrides > file > defaults.
    """
    parser = configparser.ConfigParser()
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
    overrides = dict(overrides or {})

    def get(section, key, cast, default):
        if parser.has_option(section, key):
            try:
                return cast(parser.get(section, key))
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
        return default

    manifest = overrides.pop("manifest", None) or get("io", "manifest", str, None)
    output_dir = overrides.pop("output_dir", None) or get("io", "output_dir", str, None)
    if manifest is None or output_dir is None:
        raise ConfigError("manifest and output_dir are required (config [io] or flags)")

    icp = IcpConfig(
        max_iterations=get("odometry", "max_iterations", int, 80),
        convergence_threshold=get("odometry", "convergence_threshold", float, 1e-5),
        max_correspondence_distance=get("odometry", "max_correspondence_distance",
                                        float, 0.1),
        voxel_size=None,
    )
    odo = OdometryConfig(
        icp=icp,
        scan_range=get("odometry", "scan_range", float, 35.0),
        scan_voxel=get("odometry", "scan_voxel", float, 0.1),
        map_window=get("odometry", "map_window", int, 15),
    )

    radii = get("bpa", "radii", lambda s: tuple(float(x) for x in s.split(",")),
                BpaConfig().radii)
    dedup = get("bpa", "dedup_voxel", lambda s: None if s == "none" else float(s),
                BpaConfig().dedup_voxel)
    bpa = BpaConfig(radii=radii, dedup_voxel=dedup,
                    normal_neighbors=get("bpa", "normal_neighbors", int, 16))

    preset = overrides.pop("preset", None) or get("beam", "preset", str, None)
    if preset:
        beam = beam_model_from_preset(preset)
    else:
        beam = default_beam_model(
            azimuth_count=get("beam", "azimuth_count", int, 1024),
            channels=get("beam", "channels", int, 64),
            max_range=get("beam", "max_range", float, 80.0),
            sign=get("beam", "elevation_sign", str, "down"),
        )

    offsets = overrides.pop("offsets", None)
    offsets = _parse_offsets(offsets) if offsets else \
        get("synthesis", "offsets", _parse_offsets, tuple(np.linspace(-2, 2, 11)))

    noise = NoiseConfig(
        sigma=get("noise", "sigma", float, 0.02),
        drop_probability=get("noise", "drop_probability", float, 0.2),
        seed=0,
    )
    frame_skip = overrides.pop("frame_skip", None)
    labels = LabelConfig(frame_skip=int(frame_skip) if frame_skip is not None
                         else get("labels", "frame_skip", int, 5))
    pid = PidConfig(
        lateral_gains=get("pid", "lateral", lambda s: tuple(map(float, s.split(","))),
                          (1.0, 0.05, 0.2)),
        longitudinal_gains=get("pid", "longitudinal",
                               lambda s: tuple(map(float, s.split(","))),
                               (0.5, 0.05, 0.1)),
        target_speed_scale=get("pid", "target_speed_scale", float, 1.0),
        brake_threshold=get("pid", "brake_threshold", float, 0.4),
    )
    seed = overrides.pop("seed", None)
    seed = int(seed) if seed is not None else get("run", "seed", int, 0)
    workers = overrides.pop("workers", None)
    workers = int(workers) if workers is not None else get("run", "workers", int, 1)
    if overrides:
        raise ConfigError(f"unknown overrides: {sorted(overrides)}")
    return PipelineConfig(manifest=manifest, output_dir=output_dir, odometry=odo,
                          bpa=bpa, beam=beam, offsets=offsets, labels=labels,
                          noise=replace(noise, seed=seed), pid=pid,
                          seed=seed, workers=workers)


# -------------------------------------------------------------------- staging


def _stage(name):
    def wrap(fn):
        def inner(cfg: PipelineConfig, *a, **kw):
            try:
                return fn(cfg, *a, **kw)
            except PipelineStageError:
                raise
            except Exception as exc:
                raise PipelineStageError(name, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


def _out(cfg: PipelineConfig, *parts) -> Path:
    path = cfg.output_dir.joinpath(*parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def sample_key(timestep: int, offset: float) -> str:
    return f"seq0_t{timestep}_off{offset:+.1f}"


@_stage("odometry")
def stage_odometry(cfg: PipelineConfig) -> Path:
    seq = load_sequence(read_manifest(cfg.manifest))
    traj = estimate_trajectory(seq, cfg.odometry, workers=cfg.workers)
    path = _out(cfg, "trajectory.txt")
    write_trajectory(list(traj), path)
    return path


@_stage("accumulate")
def stage_accumulate(cfg: PipelineConfig) -> Path:
    seq = load_sequence(read_manifest(cfg.manifest))
    traj = read_trajectory(_out(cfg, "trajectory.txt"))
    fused = accumulate(seq, traj)
    path = _out(cfg, "fused.ply")
    write_cloud(fused.cloud, path, format="binary")
    return path


@_stage("mesh")
def stage_mesh(cfg: PipelineConfig) -> Path:
    from .scene import FusedCloud

    cloud = read_cloud(_out(cfg, "fused.ply"), frame="world")
    traj = read_trajectory(_out(cfg, "trajectory.txt"))
    hint = np.mean([p.origin() for p in traj], axis=0)
    fused = FusedCloud(cloud, np.zeros(len(cloud), dtype=np.int64))
    mesh = reconstruct_mesh(fused, cfg.bpa, interior_hint=hint, workers=cfg.workers)
    path = _out(cfg, "mesh.ply")
    write_mesh(mesh, path, format="binary")
    return path


def labeled_timesteps(n_poses: int, cfg: LabelConfig):
    return range(0, n_poses - 4 * cfg.frame_skip)


@_stage("label")
def stage_label(cfg: PipelineConfig) -> Path:
    """Labels for every (timestep, offset): reference poses directly at offset
    zero, spline-interpolated paths elsewhere."""
    traj = read_trajectory(_out(cfg, "trajectory.txt"))
    lines = []
    for t in labeled_timesteps(len(traj), cfg.labels):
        for off in cfg.offsets:
            if off == 0.0:
                label = reference_label(traj, t, cfg.labels)
            else:
                label = offset_label(traj, t, offset_pose(traj[t], off), cfg.labels)
            flat = " ".join(f"{v:.17g}" for v in label.waypoints.ravel())
            lines.append(f"{t} {off:.6f} {flat}")
    path = _out(cfg, "labels.txt")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_labels(path):
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts:
            continue
        rows.append((int(parts[0]), float(parts[1]),
                     np.array(parts[2:10], dtype=np.float64).reshape(4, 2)))
    return rows


@_stage("synthesize")
def stage_synthesize(cfg: PipelineConfig) -> Path:
    """Ray cast a full-360 scan at every labeled (timestep, offset) viewpoint."""
    traj = read_trajectory(_out(cfg, "trajectory.txt"))
    mesh = read_mesh(_out(cfg, "mesh.ply"))
    index = BvhIndex(mesh)
    noise = replace(cfg.noise, seed=cfg.seed)
    out_dir = _out(cfg, "synth")
    out_dir.mkdir(parents=True, exist_ok=True)
    for t in labeled_timesteps(len(traj), cfg.labels):
        for oi, off in enumerate(cfg.offsets):
            pose = offset_pose(traj[t], off)
            cloud = synthesize_scan(index, pose, cfg.beam)
            cloud = apply_noise(cloud, noise.child(_NOISE_STREAM_SYNTH, t, oi))
            write_cloud(cloud, out_dir / f"{sample_key(t, off)}.ply", format="binary")
    return out_dir


@_stage("export")
def stage_export(cfg: PipelineConfig) -> Path:
    """Crop synthesized scans to the frontal half-space and write the dataset."""
    labels = read_labels(_out(cfg, "labels.txt"))
    samples = []
    for t, off, waypoints in labels:
        cloud = read_cloud(_out(cfg, "synth", f"{sample_key(t, off)}.ply"))
        frontal = PointCloud(cloud.points[cloud.points[:, 0] >= 0.0], cloud.frame)
        samples.append(DatasetSample(frontal, waypoints, 0, t, off))
    return export_dataset(samples, _out(cfg, "dataset"))


@dataclass
class RunResult:
    output_dir: Path
    index_path: Path
    report: dict


def run_pipeline(cfg: PipelineConfig) -> RunResult:
    """Execute all stages; idempotent given the same config and seed."""
    manifest = read_manifest(cfg.manifest)  # validates referenced files up front
    if len(manifest.paths) < 2:
        raise InvalidInputError("pipeline needs a sequence of at least 2 scans")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    marker = cfg.output_dir / ".partial"
    marker.write_text("pipeline in progress\n", encoding="utf-8")

    report = {"stages": {}, "counts": {}}
    stages = [
        ("odometry", stage_odometry),
        ("accumulate", stage_accumulate),
        ("mesh", stage_mesh),
        ("label", stage_label),
        ("synthesize", stage_synthesize),
        ("export", stage_export),
    ]
    last = None
    for name, fn in stages:
        start = time.perf_counter()
        last = fn(cfg)
        report["stages"][name] = {"seconds": round(time.perf_counter() - start, 3)}

    traj = read_trajectory(cfg.output_dir / "trajectory.txt")
    mesh = read_mesh(cfg.output_dir / "mesh.ply")
    stats = mesh_stats(mesh)
    index_path = cfg.output_dir / "dataset" / "index.txt"
    report["counts"] = {
        "scans": len(manifest.paths),
        "poses": len(traj),
        "fused_points": len(read_cloud(cfg.output_dir / "fused.ply")),
        "mesh_vertices": stats.vertices,
        "mesh_vertices_used": stats.vertices_used,
        "mesh_unreferenced": stats.unreferenced,
        "mesh_triangles": stats.triangles,
        "samples": len(index_path.read_text(encoding="utf-8").splitlines()),
        "offsets": list(cfg.offsets),
    }
    report["config"] = {"frame_skip": cfg.labels.frame_skip, "seed": cfg.seed}
    (cfg.output_dir / "run_report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8")
    marker.unlink()
    return RunResult(cfg.output_dir, index_path, report)
