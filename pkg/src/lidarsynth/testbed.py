"""Procedural ground-truth scenes and a direct LiDAR simulator.

Scenes are built from planar patches with exact parameters (road and sidewalk
bands, curb faces, barrier panels, cross-shaped posts), so point-to-surface
distances have closed forms and serve as independent oracles for odometry,
meshing, synthesis, and labeling. The triangulated mesh *is* the analytic
surface set, triangle by triangle.

World frame = the first sensor frame: the sensor path lies in the z = 0 plane
and the road sits at z = -sensor_height. Barrier panels and posts are placed
with deterministic per-seed jitter; the gaps between panels give ICP the
longitudinal texture a bare extruded corridor would lack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .bvh import BvhIndex
from .errors import InvalidInputError
from .fileio import ScanSequence
from .geometry import PoseSE3, TriangleMesh
from .labels import LabelConfig, offset_label, reference_label
from .synthesis import BeamModel, NoiseConfig, apply_noise, offset_pose, synthesize_scan

TAG_ROAD = 0
TAG_SIDEWALK = 1
TAG_CURB = 2
TAG_BARRIER = 3
TAG_POST = 4
TAG_BLOCK = 5

_NOISE_STREAM_SIM = 1


# ------------------------------------------------------------------------ path


class _Path:
    """Arc-length parameterized lane center: pos(s), yaw(s), right(s)."""

    def __init__(self, kind: str, length: float, arc_radius: float):
        if kind not in ("straight", "arc", "s-curve"):
            raise InvalidInputError(f"unknown scene kind {kind!r}")
        self.kind = kind
        self.length = length
        self.radius = arc_radius

    def _arc_state(self, s, center_y, turn):
        # turn=+1 curves toward +y (right), -1 toward -y; starts at origin heading +x.
        beta = np.asarray(s, dtype=np.float64) / self.radius
        x = self.radius * np.sin(beta)
        y = center_y - turn * self.radius * np.cos(beta)
        yaw = turn * beta
        return x, y, yaw

    def state(self, s):
        """(x, y, yaw) at stations s; vectorized."""
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "straight":
            return s, np.zeros_like(s), np.zeros_like(s)
        if self.kind == "arc":
            return self._arc_state(s, self.radius, +1)
        # s-curve: +y arc then -y arc, tangent-continuous at mid.
        half = self.length / 2.0
        x1, y1, yaw1 = self._arc_state(np.minimum(s, half), self.radius, +1)
        mx, my, myaw = self._arc_state(half, self.radius, +1)
        beta2 = np.maximum(s - half, 0.0) / self.radius
        x2 = mx + self.radius * (np.sin(myaw) - np.sin(myaw - beta2))
        y2 = my + self.radius * (np.cos(myaw - beta2) - np.cos(myaw))
        yaw2 = myaw - beta2
        late = s > half
        return (np.where(late, x2, x1), np.where(late, y2, y1),
                np.where(late, yaw2, yaw1))

    def point(self, s, d, z):
        """World point at station s, signed lateral offset d (positive right)."""
        x, y, yaw = self.state(s)
        rx, ry = -np.sin(yaw), np.cos(yaw)  # local +y (right) in world
        return np.stack(np.broadcast_arrays(x + d * rx, y + d * ry,
                                            np.broadcast_to(z, np.shape(x + d * rx))), axis=-1)

    def frame_of(self, xy):
        """Inverse map world xy -> (s, d). Exact for straight/arc; the s-curve
        picks whichever arc piece reprojects closest."""
        xy = np.asarray(xy, dtype=np.float64)
        if self.kind == "straight":
            return xy[..., 0].copy(), xy[..., 1].copy()
        if self.kind == "arc":
            return self._arc_frame(xy, 0.0, np.array([0.0, self.radius]), +1)
        half = self.length / 2.0
        s1, d1 = self._arc_frame(xy, 0.0, np.array([0.0, self.radius]), +1)
        mx, my, myaw = (float(v) for v in self.state(np.array(half)))
        # Second arc's center sits R along the mid pose's local left (-right).
        c2 = np.array([mx + self.radius * math.sin(myaw),
                       my - self.radius * math.cos(myaw)])
        s2, d2 = self._arc_frame(xy, half, c2, -1, yaw0=myaw)
        err1 = np.linalg.norm(self.point(s1, d1, 0.0)[..., :2] - xy[..., :2], axis=-1)
        err2 = np.linalg.norm(self.point(s2, d2, 0.0)[..., :2] - xy[..., :2], axis=-1)
        use2 = err2 < err1
        return np.where(use2, s2, s1), np.where(use2, d2, d1)

    def _arc_frame(self, xy, s0, center, turn, yaw0=0.0):
        v = xy[..., :2] - center
        r = np.linalg.norm(v, axis=-1)
        # Recover the sweep angle from the station-s0 start of the arc.
        if turn > 0:
            beta = np.arctan2(v[..., 0], -v[..., 1]) - yaw0
            d = self.radius - r
        else:
            beta = yaw0 - np.arctan2(-v[..., 0], v[..., 1])
            d = r - self.radius
        return s0 + self.radius * np.arctan2(np.sin(beta), np.cos(beta)), d


# ----------------------------------------------------------------------- scene


@dataclass(frozen=True)
class SyntheticScene:
    """Analytic scene: tagged planar triangles plus the ground-truth trajectory."""

    kind: str
    length: float
    lane_width: float
    seed: int
    mesh: TriangleMesh
    tags: np.ndarray
    trajectory: tuple
    sensor_height: float
    road_half_width: float
    walk_outer: float
    curb_height: float
    barrier_lateral: float
    barrier_height: float
    arc_radius: float
    pose_spacing: float
    path: _Path = field(repr=False, default=None)

    @property
    def road_z(self) -> float:
        return -self.sensor_height

    def path_frame(self, points) -> tuple[np.ndarray, np.ndarray]:
        """(station, lateral) coordinates of world points."""
        return self.path.frame_of(np.asarray(points, dtype=np.float64))


class _SceneBuilder:
    def __init__(self):
        self.vertices = []
        self.triangles = []
        self.tags = []

    def quad(self, p0, p1, p2, p3, tag):
        """Two triangles over corners given in ring order."""
        base = len(self.vertices)
        self.vertices.extend([p0, p1, p2, p3])
        self.triangles.append([base, base + 1, base + 2])
        self.triangles.append([base, base + 2, base + 3])
        self.tags.extend([tag, tag])

    def grid(self, points, tag):
        """Triangulate an (I, J, 3) vertex grid with shared vertices (no cracks)."""
        ni, nj = points.shape[:2]
        base = len(self.vertices)
        self.vertices.extend(points.reshape(-1, 3))
        for i in range(ni - 1):
            for j in range(nj - 1):
                v00 = base + i * nj + j
                v01 = v00 + 1
                v10 = v00 + nj
                v11 = v10 + 1
                self.triangles.append([v00, v10, v11])
                self.triangles.append([v00, v11, v01])
                self.tags.extend([tag, tag])

    def build(self):
        return (TriangleMesh(np.array(self.vertices), np.array(self.triangles)),
                np.array(self.tags, dtype=np.int64))


def generate_scene(kind: str, length: float = 49.0, lane_width: float = 3.5,
                   seed: int = 0, *, pose_spacing: float = 1.0,
                   sensor_height: float = 1.8, curb_height: float = 0.15,
                   sidewalk_width: float = 2.5, barrier_height: float = 3.0,
                   barrier_clearance: float = 0.3, arc_radius: float = 60.0,
                   road_padding: float = 40.0, segment_length: float = 2.0,
                   surface_texture: float = 0.03,
                   features: tuple = ("panels", "ribs", "posts", "blocks")) -> SyntheticScene:
    """Road + sidewalks (+0.15 m curb) + barrier panels + posts + roadside blocks.

    Ground bands carry a deterministic per-seed height texture (interior grid
    vertices jittered by ±surface_texture) and barrier panels vary slightly in
    depth: bare extruded planes would leave point-to-point ICP with nothing to
    observe longitudinal motion against, which no real street does.
    """
    if length <= 0 or lane_width <= 0:
        raise InvalidInputError("length and lane width must be positive")
    path = _Path(kind, length, arc_radius)
    rng = np.random.default_rng(seed)

    road_half = lane_width
    walk_outer = road_half + sidewalk_width
    barrier_d = walk_outer + barrier_clearance
    road_z = -sensor_height
    walk_z = road_z + curb_height

    b = _SceneBuilder()
    s_lo, s_hi = -road_padding, length + road_padding
    stations = np.arange(s_lo, s_hi + 1e-9, segment_length)

    def band(d0, d1, z, tag):
        """Ground band as a vertex grid; interior vertices get height texture."""
        n_lat = max(1, int(round(abs(d1 - d0) / 1.2)))
        laterals = np.linspace(d0, d1, n_lat + 1)
        ss, dd = np.meshgrid(stations, laterals, indexing="ij")
        pts = path.point(ss, dd, z)
        if surface_texture > 0:
            bump = rng.uniform(-surface_texture, surface_texture, size=ss.shape)
            bump[:, 0] = 0.0   # band edges stay at nominal height so
            bump[:, -1] = 0.0  # curbs and neighbors meet without cracks
            pts[:, :, 2] += bump
        b.grid(pts, tag)

    def wall(d, z0, z1, tag, s_start, s_end, texture=None):
        """Vertical face along the path; interior vertices jittered laterally.

        Untextured vertical planes leave ICP a frictionless surface to slide
        on, just like an untextured road would.
        """
        amp = surface_texture if texture is None else texture
        n_s = max(1, int(math.ceil((s_end - s_start) / min(segment_length, 1.0))))
        n_z = max(1, int(math.ceil((z1 - z0) / 0.8)))
        ss, zz = np.meshgrid(np.linspace(s_start, s_end, n_s + 1),
                             np.linspace(z0, z1, n_z + 1), indexing="ij")
        dd = np.full(ss.shape, float(d))
        if amp > 0 and n_s > 1 and n_z > 1:
            bump = rng.uniform(-amp, amp, size=ss.shape)
            bump[0, :] = bump[-1, :] = 0.0
            bump[:, 0] = bump[:, -1] = 0.0
            dd = dd + np.sign(d) * bump
        b.grid(path.point(ss, dd, 0.0) * [1.0, 1.0, 0.0] + zz[..., None] * [0.0, 0.0, 1.0],
               tag)

    def block(s_c, d_c, width, depth, height, base_z, tag):
        """Axis-aligned-to-path box: four vertical faces plus a top."""
        s0, s1 = s_c - depth / 2, s_c + depth / 2
        d0, d1 = d_c - width / 2, d_c + width / 2
        z1 = base_z + height
        for (sa, da), (sb, db) in [(((s0, d0)), ((s1, d0))), (((s1, d0)), ((s1, d1))),
                                   (((s1, d1)), ((s0, d1))), (((s0, d1)), ((s0, d0)))]:
            b.quad(path.point(sa, da, base_z), path.point(sb, db, base_z),
                   path.point(sb, db, z1), path.point(sa, da, z1), tag)
        b.quad(path.point(s0, d0, z1), path.point(s1, d0, z1),
               path.point(s1, d1, z1), path.point(s0, d1, z1), tag)

    band(-road_half, road_half, road_z, TAG_ROAD)
    for side in (-1, 1):
        band(side * road_half, side * walk_outer, walk_z, TAG_SIDEWALK)
        wall(side * road_half, road_z, walk_z, TAG_CURB, s_lo, s_hi)

        # Urban-canyon walls: a continuous tall back face, vertical pilaster
        # ribs, and gapped front panels with per-panel depth jitter. The depth
        # steps at rib and panel edges anchor forward motion for ICP. The back
        # face sits further out than the largest default pivot ball diameter,
        # so reconstruction cannot bridge panels onto it.
        back_d = barrier_d + 1.6
        wall(side * back_d, walk_z, walk_z + barrier_height + 1.5,
             TAG_BARRIER, s_lo, s_hi)
        s = s_lo + float(rng.uniform(0.5, 2.0))
        while s < s_hi and "ribs" in features:
            rib_w = float(rng.uniform(0.25, 0.5))
            block(s, side * (back_d - 0.2), width=0.4, depth=rib_w,
                  height=barrier_height + 1.2, base_z=walk_z, tag=TAG_BARRIER)
            s += float(rng.uniform(2.5, 4.5))
        panel, gap = 4.0, 2.5
        period = panel + gap
        s = s_lo + float(rng.uniform(0.0, period))
        while s < s_hi and "panels" in features:
            s_end = min(s + panel, s_hi)
            if s_end - s > 0.2:
                depth = barrier_d + float(rng.uniform(-0.2, 0.2))
                wall(side * depth, walk_z, walk_z + barrier_height, TAG_BARRIER,
                     max(s, s_lo), s_end)
            s += period

        # Cross-shaped posts near the sidewalk's outer edge.
        s = s_lo + float(rng.uniform(2.0, 6.0))
        while s < s_hi and "posts" in features:
            d = side * (walk_outer - 1.0)
            half_w, h = 0.15, 0.9
            b.quad(path.point(s - half_w, d, walk_z), path.point(s + half_w, d, walk_z),
                   path.point(s + half_w, d, walk_z + h), path.point(s - half_w, d, walk_z + h),
                   TAG_POST)
            b.quad(path.point(s, d - half_w, walk_z), path.point(s, d + half_w, walk_z),
                   path.point(s, d + half_w, walk_z + h), path.point(s, d - half_w, walk_z + h),
                   TAG_POST)
            s += float(rng.uniform(7.0, 11.0))

        # Roadside blocks (bins, parked boxes): longitudinal ICP anchors. Kept
        # low and sparse so their occlusion shadows (which reconstruction
        # bridges, like any one-sided scan) stay a small fraction of the scene.
        s = s_lo + float(rng.uniform(1.0, 4.0))
        while s < s_hi and "blocks" in features:
            d_c = side * float(rng.uniform(road_half + 0.8, walk_outer - 0.8))
            block(s, d_c,
                  width=float(rng.uniform(0.6, 1.2)),
                  depth=float(rng.uniform(0.8, 1.8)),
                  height=float(rng.uniform(0.45, 0.8)),
                  base_z=walk_z, tag=TAG_BLOCK)
            s += float(rng.uniform(5.0, 9.0))

    mesh, tags = b.build()

    n_poses = int(round(length / pose_spacing)) + 1
    poses = []
    for i in range(n_poses):
        x, y, yaw = (float(v) for v in path.state(np.array(i * pose_spacing)))
        c, s_ = math.cos(yaw), math.sin(yaw)
        sensor_to_world = np.array([[c, -s_, 0.0], [s_, c, 0.0], [0.0, 0.0, 1.0]])
        world_to_sensor = sensor_to_world.T
        pos = np.array([x, y, 0.0])
        poses.append(PoseSE3(world_to_sensor, -world_to_sensor @ pos))

    return SyntheticScene(
        kind=kind, length=length, lane_width=lane_width, seed=seed,
        mesh=mesh, tags=tags, trajectory=tuple(poses),
        sensor_height=sensor_height, road_half_width=road_half,
        walk_outer=walk_outer, curb_height=curb_height,
        barrier_lateral=barrier_d, barrier_height=barrier_height,
        arc_radius=arc_radius, pose_spacing=pose_spacing, path=path,
    )


# ------------------------------------------------------------------ simulation


_GOLDEN = 0.6180339887498949  # spin phase advances by the golden ratio per scan


def simulate_sequence(scene: SyntheticScene, model: BeamModel,
                      noise: NoiseConfig, frequency_hz: float = 10.0) -> ScanSequence:
    """Direct simulation: synthesize a scan at every ground-truth pose, add noise.

    Each scan gets a different sweep spin phase (golden-ratio steps), as the
    azimuth grid of a spinning sensor is not synchronized to vehicle motion.
    Scan 0 keeps phase 0, so it matches direct synthesis with the given model.
    """
    bvh = BvhIndex(scene.mesh)
    scans = []
    for t, pose in enumerate(scene.trajectory):
        phased = replace(model, azimuth_phase=(t * _GOLDEN) % 1.0)
        scan = synthesize_scan(bvh, pose, phased)
        scans.append(apply_noise(scan, noise.child(_NOISE_STREAM_SIM, t)))
    return ScanSequence(tuple(scans), frequency_hz)


# ------------------------------------------------------------------- distances


def _point_triangle_distance_sq(points, a, b, c):
    """Squared distance from points (N,3) to one triangle; exact, vectorized."""
    def seg_sq(p, q0, q1):
        d = q1 - q0
        denom = float(d @ d)
        t = np.clip((p - q0) @ d / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(p))
        diff = p - (q0 + t[:, None] * d)
        return np.einsum("ij,ij->i", diff, diff)

    n = np.cross(b - a, c - a)
    nn = float(n @ n)
    rel = points - a
    dist_plane = rel @ n
    proj = points - (dist_plane / nn)[:, None] * n
    # Barycentric inside test for the projection.
    v0, v1 = b - a, c - a
    v2 = proj - a
    d00, d01, d11 = float(v0 @ v0), float(v0 @ v1), float(v1 @ v1)
    d20 = v2 @ v0
    d21 = v2 @ v1
    den = d00 * d11 - d01 * d01
    w1 = (d11 * d20 - d01 * d21) / den
    w2 = (d00 * d21 - d01 * d20) / den
    inside = (w1 >= 0) & (w2 >= 0) & (w1 + w2 <= 1)
    best = np.minimum(seg_sq(points, a, b), seg_sq(points, b, c))
    best = np.minimum(best, seg_sq(points, c, a))
    plane_sq = dist_plane * dist_plane / nn
    return np.where(inside, np.minimum(best, plane_sq), best)


def _tri_distance_batch(points, a, b, c):
    """Squared point-triangle distances for matched batches (N,K,3) each."""
    def seg_sq(p, q0, q1):
        d = q1 - q0
        denom = np.einsum("nkj,nkj->nk", d, d)
        t = np.einsum("nkj,nkj->nk", p - q0, d) / np.where(denom > 0, denom, 1.0)
        t = np.clip(t, 0.0, 1.0)
        diff = p - (q0 + t[..., None] * d)
        return np.einsum("nkj,nkj->nk", diff, diff)

    n = np.cross(b - a, c - a)
    nn = np.einsum("nkj,nkj->nk", n, n)
    nn_safe = np.where(nn > 0, nn, 1.0)
    rel = points - a
    dist_plane = np.einsum("nkj,nkj->nk", rel, n)
    proj = points - (dist_plane / nn_safe)[..., None] * n
    v0, v1 = b - a, c - a
    v2 = proj - a
    d00 = np.einsum("nkj,nkj->nk", v0, v0)
    d01 = np.einsum("nkj,nkj->nk", v0, v1)
    d11 = np.einsum("nkj,nkj->nk", v1, v1)
    d20 = np.einsum("nkj,nkj->nk", v2, v0)
    d21 = np.einsum("nkj,nkj->nk", v2, v1)
    den = d00 * d11 - d01 * d01
    den_safe = np.where(np.abs(den) > 0, den, 1.0)
    w1 = (d11 * d20 - d01 * d21) / den_safe
    w2 = (d00 * d21 - d01 * d20) / den_safe
    inside = (w1 >= 0) & (w2 >= 0) & (w1 + w2 <= 1) & (np.abs(den) > 0)
    best = np.minimum(seg_sq(points, a, b), seg_sq(points, b, c))
    best = np.minimum(best, seg_sq(points, c, a))
    plane_sq = dist_plane * dist_plane / nn_safe
    return np.where(inside, np.minimum(best, plane_sq), best)


def surface_distances(scene: SyntheticScene, points, tags=None,
                      chunk: int = 100_000, candidates: int = 24) -> np.ndarray:
    """Exact distance from each point to the nearest scene surface (optionally by tag).

    Candidate triangles come from a KD-tree over triangle centroids; the
    result is certified exact against the centroid lower bound and falls back
    to a full scan for the rare uncertified points.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    tris = scene.mesh.triangles
    if tags is not None:
        tris = tris[np.isin(scene.tags, np.asarray(tags))]
    v = scene.mesh.vertices
    a_all, b_all, c_all = v[tris[:, 0]], v[tris[:, 1]], v[tris[:, 2]]
    centroids = (a_all + b_all + c_all) / 3.0
    tri_radius = np.sqrt(np.maximum.reduce([
        np.einsum("ij,ij->i", a_all - centroids, a_all - centroids),
        np.einsum("ij,ij->i", b_all - centroids, b_all - centroids),
        np.einsum("ij,ij->i", c_all - centroids, c_all - centroids),
    ]))
    r_max = float(tri_radius.max())
    k = min(candidates, len(tris))
    tree = cKDTree(centroids)

    out = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        block = pts[lo: lo + chunk]
        d_cen, idx = tree.query(block, k=k, workers=-1)
        if k == 1:
            d_cen, idx = d_cen[:, None], idx[:, None]
        sq = _tri_distance_batch(block[:, None, :], a_all[idx], b_all[idx], c_all[idx])
        best = np.sqrt(sq.min(axis=1))
        # Any excluded triangle is at least (kth centroid distance - r_max) away.
        unresolved = np.flatnonzero((best > d_cen[:, -1] - r_max) & (k < len(tris)))
        for u in unresolved:
            sq_all = _tri_distance_batch(block[u][None, None, :],
                                         a_all[None, :, :], b_all[None, :, :],
                                         c_all[None, :, :])
            best[u] = np.sqrt(sq_all.min())
        out[lo: lo + chunk] = best
    return out


def trajectory_errors(estimated, reference) -> tuple[np.ndarray, np.ndarray]:
    """Per-pose (translation m, rotation deg) errors between two trajectories."""
    if len(estimated) != len(reference):
        raise InvalidInputError("trajectory lengths differ")
    trans = np.empty(len(estimated))
    rot = np.empty(len(estimated))
    for i, (est, ref) in enumerate(zip(estimated, reference)):
        trans[i] = np.linalg.norm(est.origin() - ref.origin())
        r = est.rotation @ ref.rotation.T
        cos_angle = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
        rot[i] = math.degrees(math.acos(cos_angle))
    return trans, rot


def coverage_ratio(mesh: TriangleMesh, pose: PoseSE3, model: BeamModel) -> float:
    """Fraction of beams that return a hit within max range from this pose."""
    cloud = synthesize_scan(BvhIndex(mesh), pose, model)
    return len(cloud) / model.ray_count


def _tri_samples(verts, tris):
    """Vertices, edge midpoints, and centroid of each triangle, stacked."""
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    return np.concatenate([a, b, c, (a + b + c) / 3.0,
                           (a + b) / 2.0, (b + c) / 2.0, (a + c) / 2.0])


def evaluate_pipeline(scene: SyntheticScene, *, trajectory=None, mesh=None,
                      samples=None, sample_poses=None,
                      label_cfg: LabelConfig = LabelConfig(),
                      max_surface_points: int = 200_000, seed: int = 0) -> dict:
    """Score pipeline outputs against the scene's analytic ground truth.

    trajectory: estimated poses (world frame = scene frame of scan 0).
    mesh: reconstructed TriangleMesh.
    samples: list of (timestep, offset, PointCloud sensor frame, (4,2) label).
    sample_poses: world-to-sensor pose per sample (the synthesis viewpoints).

    Surface distances for large sample sets are computed on a seeded random
    subsample of `max_surface_points` points.
    """
    if trajectory is None or mesh is None or samples is None or sample_poses is None:
        raise InvalidInputError("evaluate_pipeline needs trajectory, mesh, samples, "
                                "and sample_poses")
    report = {}

    trans, rot = trajectory_errors(trajectory, scene.trajectory)
    path_len = scene.length
    report["odometry"] = {
        "translation_max_m": float(trans.max()),
        "translation_mean_m": float(trans.mean()),
        "rotation_max_deg": float(rot.max()),
        "drift_m": float(trans[-1]),
        "drift_fraction": float(trans[-1] / path_len),
    }

    report["mesh"] = {"road_hausdorff_m": float(road_hausdorff(scene, mesh))}

    world_parts = []
    label_err = 0.0
    for (t, off, cloud, label), pose in zip(samples, sample_poses):
        if len(cloud):
            world_parts.append(pose.apply_inverse(cloud.points))
        if off == 0.0:
            truth = reference_label(scene.trajectory, t, label_cfg).waypoints
        else:
            gt_pose = offset_pose(scene.trajectory[t], off)
            truth = offset_label(scene.trajectory, t, gt_pose, label_cfg).waypoints
        label_err = max(label_err, float(np.abs(label - truth).max()))
    report["labels"] = {"max_waypoint_error_m": label_err}

    world = np.concatenate(world_parts) if world_parts else np.zeros((0, 3))
    rng = np.random.default_rng(seed)
    if len(world) > max_surface_points:
        world = world[rng.choice(len(world), max_surface_points, replace=False)]
    if len(world):
        d = surface_distances(scene, world)
        report["synthesis"] = {
            "p50_m": float(np.percentile(d, 50)),
            "p95_m": float(np.percentile(d, 95)),
            "max_m": float(d.max()),
            "points_evaluated": int(len(d)),
        }
    else:
        report["synthesis"] = {"p50_m": 0.0, "p95_m": 0.0, "max_m": 0.0,
                               "points_evaluated": 0}
    return report


def coverage_comparison(scene: SyntheticScene, seq, trajectory, bpa_cfg, model,
                        offset: float = 2.0, scan_counts=(1, 5, 20),
                        workers: int = 1) -> dict:
    """Beam hit ratio at a lateral offset, for meshes built from windows of
    1..n scans centered on the viewpoint's timestep (the alignment ablation)."""
    from .scene import accumulate, reconstruct_mesh

    center = len(seq) // 2
    viewpoint = offset_pose(trajectory[center], offset)
    ratios = {}
    for n in scan_counts:
        half = (n - 1) // 2
        lo = max(0, center - half)
        hi = min(len(seq), lo + n)
        lo = max(0, hi - n)
        window = ScanSequence(tuple(seq.scans[lo:hi]), seq.frequency_hz)
        poses = list(trajectory)[lo:hi]
        # accumulate() fuses with the absolute poses, so the window stays in
        # the scene frame no matter where it starts.
        fused = accumulate(window, poses)
        mesh = reconstruct_mesh(fused, bpa_cfg,
                                interior_hint=trajectory[center].origin(),
                                workers=workers)
        ratios[n] = coverage_ratio(mesh, viewpoint, model)
    return ratios


def road_hausdorff(scene: SyntheticScene, mesh: TriangleMesh,
                   margin: float = 0.5) -> float:
    """Symmetric Hausdorff distance between `mesh` and the analytic road surface.

    Restricted to the road band inset by `margin` and to stations the
    trajectory covers. The surface-to-mesh direction uses vertical probes,
    which upper-bound the Euclidean distance and catch holes.
    """
    road_z = scene.road_z
    inner = scene.road_half_width - margin

    def in_region(points):
        s, d = scene.path_frame(points[:, :2])
        return ((np.abs(d) <= inner) & (s >= margin) & (s <= scene.length - margin)
                & (np.abs(points[:, 2] - road_z) < 0.5))

    # Mesh -> surface: sample mesh triangles whose vertices all sit in the band.
    tri_in = in_region(mesh.vertices)[mesh.triangles].all(axis=1)
    forward = 0.0
    if tri_in.any():
        samples = _tri_samples(mesh.vertices, mesh.triangles[tri_in])
        forward = float(surface_distances(scene, samples, tags=[TAG_ROAD]).max())

    # Surface -> mesh: vertical probes at samples of the analytic road triangles.
    road_tris = scene.mesh.triangles[scene.tags == TAG_ROAD]
    keep = in_region(scene.mesh.vertices)[road_tris].all(axis=1)
    if not keep.any():
        raise InvalidInputError("road region is empty; margin too large?")
    surf = _tri_samples(scene.mesh.vertices, road_tris[keep])
    origins = surf.copy()
    origins[:, 2] = surf[:, 2] + 2.0
    dirs = np.zeros_like(origins)
    dirs[:, 2] = -1.0
    t, tri = BvhIndex(mesh).first_hits(origins, dirs, validate=False)
    if (tri < 0).any():
        return np.inf  # hole in the road region
    hit_z = origins[:, 2] - t
    backward = float(np.abs(hit_z - surf[:, 2]).max())
    return max(forward, backward)
