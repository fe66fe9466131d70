"""Scene building: accumulate posed scans into one world-frame cloud and mesh it.

Accumulation expresses every scan in the frame of the first one (P'_i =
T_i^-1 P_i) and unions the results, keeping per-point source timesteps.
Meshing runs ball pivoting over the (optionally deduplicated) fused cloud;
deduplication keeps the lowest-index original point per voxel, so mesh
vertices are always bit-equal to input points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bpa import ball_pivot, estimate_normals
from .errors import InvalidInputError
from .fileio import ScanSequence
from .geometry import FRAME_WORLD, PointCloud, TriangleMesh, transform_cloud
from .spatial import voxel_downsample


@dataclass(frozen=True)
class FusedCloud:
    """World-frame union of all scans plus each point's source timestep."""

    cloud: PointCloud
    source_index: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.source_index, dtype=np.int64)
        if src.shape != (len(self.cloud),):
            raise InvalidInputError("source_index length must match the cloud")
        object.__setattr__(self, "source_index", src)

    def __len__(self):
        return len(self.cloud)


@dataclass(frozen=True)
class BpaConfig:
    radii: tuple = (0.4, 0.8, 1.6)
    dedup_voxel: float | None = 0.05
    normal_neighbors: int = 16

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if not radii or any(r <= 0 for r in radii):
            raise InvalidInputError("radii must be positive")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise InvalidInputError("radii must be strictly ascending")
        if self.dedup_voxel is not None and self.dedup_voxel <= 0:
            raise InvalidInputError("dedup_voxel must be positive or None")
        if self.normal_neighbors < 3:
            raise InvalidInputError("normal_neighbors must be >= 3")
        object.__setattr__(self, "radii", radii)


def accumulate(seq: ScanSequence, trajectory) -> FusedCloud:
    """Union of all scans in the frame of scan 0 (Eq. P'_i = T_i^-1 P_i)."""
    if len(seq) != len(trajectory):
        raise InvalidInputError(
            f"sequence ({len(seq)}) and trajectory ({len(trajectory)}) lengths differ")
    parts = []
    sources = []
    for i, (scan, pose) in enumerate(zip(seq.scans, trajectory)):
        parts.append(transform_cloud(scan, pose, "inverse", frame=FRAME_WORLD).points)
        sources.append(np.full(len(scan), i, dtype=np.int64))
    points = np.concatenate(parts) if parts else np.zeros((0, 3))
    source = np.concatenate(sources) if sources else np.zeros(0, dtype=np.int64)
    return FusedCloud(PointCloud(points, FRAME_WORLD), source)


@dataclass(frozen=True)
class MeshStats:
    vertices: int
    vertices_used: int
    unreferenced: int
    triangles: int


def reconstruct_mesh(fused: FusedCloud, cfg: BpaConfig = BpaConfig(),
                     interior_hint=None, workers: int = 1) -> TriangleMesh:
    """Ball-pivoting reconstruction of the fused cloud.

    Vertex positions are a subset of the input points, bit-equal; isolated
    points that no ball can reach simply stay unreferenced.
    """
    pts = fused.cloud.points
    if cfg.dedup_voxel is not None:
        pts = voxel_downsample(pts, cfg.dedup_voxel, "first")
    if len(pts) < 3:
        raise InvalidInputError("need at least 3 points to reconstruct a mesh")
    normals = estimate_normals(pts, cfg.normal_neighbors, interior_hint)
    triangles = ball_pivot(pts, normals, cfg.radii, workers=workers)
    return TriangleMesh(pts, triangles)


def mesh_stats(mesh: TriangleMesh) -> MeshStats:
    used = np.unique(mesh.triangles).size
    return MeshStats(vertices=len(mesh.vertices), vertices_used=used,
                     unreferenced=len(mesh.vertices) - used,
                     triangles=mesh.triangle_count)
