"""LiDAR view synthesis: beam directions, lateral viewpoints, ray casting, noise.

Rays are parameterized r(t) = o + t d. Directions come from rotating a set of
vertical unit vectors v(theta) = (cos theta, 0, sin theta) around z by a
uniform azimuth sweep over [-pi, pi); the default elevation set stores
depression angles (negative theta) so a roof-mounted sensor sees the road,
with an `up` mode that keeps the raw positive angles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .bvh import BvhIndex
from .errors import InvalidInputError
from .geometry import FRAME_SENSOR, PointCloud, PoseSE3

ELEVATION_MIN_MAG = math.pi / 64
ELEVATION_MAX_MAG = math.pi / 3


@dataclass(frozen=True)
class BeamModel:
    """Ray direction set: `azimuth_count` uniform azimuths x `elevations` channels.

    `azimuth_phase` (fraction of one azimuth step, in [0, 1)) models the spin
    phase of the sweep; a real sensor's azimuth grid is not synchronized to
    the vehicle pose. The default 0 keeps the canonical grid.
    """

    azimuth_count: int
    elevations: np.ndarray  # radians, strictly monotonic
    max_range: float = 80.0
    azimuth_phase: float = 0.0

    def __post_init__(self):
        if self.azimuth_count < 1:
            raise InvalidInputError("azimuth_count must be >= 1")
        if self.max_range <= 0:
            raise InvalidInputError("max_range must be positive")
        if not 0.0 <= self.azimuth_phase < 1.0:
            raise InvalidInputError("azimuth_phase must be in [0, 1)")
        elev = np.asarray(self.elevations, dtype=np.float64)
        if elev.ndim != 1 or elev.size == 0:
            raise InvalidInputError("elevations must be a non-empty 1-D array")
        diffs = np.diff(elev)
        if elev.size > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise InvalidInputError("elevations must be strictly monotonic")
        elev = np.ascontiguousarray(elev)
        elev.setflags(write=False)
        object.__setattr__(self, "elevations", elev)

    @property
    def ray_count(self) -> int:
        return self.azimuth_count * self.elevations.size

    def azimuths(self) -> np.ndarray:
        step = 2.0 * math.pi / self.azimuth_count
        return np.linspace(-math.pi, math.pi, self.azimuth_count,
                           endpoint=False) + self.azimuth_phase * step


def log_spaced_elevations(channels: int = 64, lo: float = ELEVATION_MIN_MAG,
                          hi: float = ELEVATION_MAX_MAG, sign: str = "down") -> np.ndarray:
    """Channel angles with magnitudes log-spaced over [lo, hi], endpoints exact.

    sign="down" returns depression angles (negative z components); "up" keeps
    the raw positive values.
    """
    if sign not in ("down", "up"):
        raise InvalidInputError("sign must be 'down' or 'up'")
    if channels < 1 or lo <= 0 or hi <= lo:
        raise InvalidInputError("need channels >= 1 and 0 < lo < hi")
    mags = np.geomspace(lo, hi, channels) if channels > 1 else np.array([lo])
    mags[0], mags[-1] = lo, hi
    return -mags if sign == "down" else mags


def default_beam_model(azimuth_count: int = 1024, channels: int = 64,
                       max_range: float = 80.0, sign: str = "down") -> BeamModel:
    return BeamModel(azimuth_count, log_spaced_elevations(channels, sign=sign), max_range)


def build_directions(model: BeamModel) -> np.ndarray:
    """All unit ray directions, azimuth-major: d = H(phi) @ v(theta)."""
    phi = model.azimuths()
    theta = model.elevations
    cos_p, sin_p = np.cos(phi), np.sin(phi)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # H(phi) @ (cos t, 0, sin t) = (cos t cos p, cos t sin p, sin t)
    dirs = np.empty((phi.size, theta.size, 3))
    dirs[:, :, 0] = cos_p[:, None] * cos_t[None, :]
    dirs[:, :, 1] = sin_p[:, None] * cos_t[None, :]
    dirs[:, :, 2] = sin_t[None, :]
    return dirs.reshape(-1, 3)


@dataclass(frozen=True)
class ViewpointSet:
    """Per timestep, the virtual sensor poses at each lateral offset."""

    offsets: tuple
    poses: tuple  # poses[timestep][offset_index] -> PoseSE3

    def __post_init__(self):
        offs = tuple(float(o) for o in self.offsets)
        arr = np.asarray(offs)
        if arr.size:
            if abs(arr.sum()) > 1e-9 * max(1.0, np.abs(arr).max()):
                raise InvalidInputError("offsets must be symmetric about zero")
            if arr.size > 2 and np.abs(np.diff(arr, 2)).max() > 1e-9:
                raise InvalidInputError("offsets must be linearly spaced")
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "poses", tuple(tuple(row) for row in self.poses))


def default_offsets(count: int = 11, extent: float = 2.0) -> tuple:
    """`count` offsets spanning [-extent, +extent]; 11 over ±2 m by default."""
    return tuple(np.linspace(-extent, extent, count))


def offset_pose(reference: PoseSE3, offset: float) -> PoseSE3:
    """Virtual world-to-sensor pose displaced by `offset` along the sensor's +y.

    Shifting the sensor by o along its local right axis subtracts o from the
    y component of the world-to-sensor translation; orientation is unchanged
    and z is inherited (locally planar road assumption).
    """
    t = reference.translation.copy()
    t[1] -= offset
    return PoseSE3(reference.rotation, t)


def sample_viewpoints(trajectory, offsets) -> ViewpointSet:
    if len(trajectory) == 0:
        raise InvalidInputError("trajectory must be non-empty")
    poses = tuple(
        tuple(offset_pose(ref, o) for o in offsets) for ref in trajectory
    )
    return ViewpointSet(tuple(offsets), poses)


def synthesize_scan(index: BvhIndex, pose: PoseSE3, model: BeamModel) -> PointCloud:
    """Cast one ray per beam direction from the sensor origin; sensor-frame result.

    Output points keep direction order; misses and hits beyond max range are
    omitted. An empty cloud is a valid result.
    """
    dirs_sensor = build_directions(model)
    rot_world = pose.rotation.T  # sensor-to-world rotation
    dirs_world = dirs_sensor @ rot_world.T
    origin = pose.origin()
    origins = np.broadcast_to(origin, dirs_world.shape)
    t, tri = index.first_hits(origins, dirs_world, validate=False)
    keep = (tri >= 0) & (t <= model.max_range)
    points = t[keep, None] * dirs_sensor[keep]
    return PointCloud(points, FRAME_SENSOR)


@dataclass(frozen=True)
class NoiseConfig:
    """CARLA-style sensor noise: per-coordinate Gaussian jitter plus random drops."""

    sigma: float = 0.02
    drop_probability: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidInputError("sigma must be >= 0")
        if not 0 <= self.drop_probability < 1:
            raise InvalidInputError("drop probability must be in [0, 1)")

    def child(self, *stream) -> "NoiseConfig":
        """Derive an independent, scheduling-invariant substream seed."""
        derived = np.random.SeedSequence([self.seed, *stream]).generate_state(1)[0]
        return replace(self, seed=int(derived))


def apply_noise(cloud: PointCloud, cfg: NoiseConfig) -> PointCloud:
    """Drop each point independently, then jitter survivors; deterministic per seed."""
    if cfg.sigma == 0 and cfg.drop_probability == 0:
        return cloud
    rng = np.random.default_rng(cfg.seed)
    points = cloud.points
    if cfg.drop_probability > 0:
        keep = rng.random(len(points)) >= cfg.drop_probability
        points = points[keep]
    if cfg.sigma > 0 and len(points):
        points = points + rng.normal(scale=cfg.sigma, size=points.shape)
    return PointCloud(points, cloud.frame)
