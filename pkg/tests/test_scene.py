"""Accumulation and ball-pivoting reconstruction tests."""

import numpy as np
import pytest

from lidarsynth.bpa import ball_pivot, estimate_normals
from lidarsynth.errors import EmptyMeshError, InvalidInputError
from lidarsynth.fileio import ScanSequence
from lidarsynth.geometry import PointCloud, PoseSE3
from lidarsynth.scene import BpaConfig, FusedCloud, accumulate, mesh_stats, reconstruct_mesh


def planar_grid(n, m, spacing=1.0, z=0.0):
    xs, ys = np.meshgrid(np.arange(n) * spacing, np.arange(m) * spacing, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel(), np.full(n * m, z)], axis=1)


def up_normals(points):
    normals = np.zeros_like(points)
    normals[:, 2] = 1.0
    return normals


# ----------------------------------------------------------------- accumulate


def test_single_scan_identity_pose():
    scan = PointCloud(np.array([[1.0, 2, 3], [4.0, 5, 6]]))
    seq = ScanSequence((scan,), 10.0)
    fused = accumulate(seq, [PoseSE3.identity()])
    assert np.array_equal(fused.cloud.points, scan.points)
    assert np.array_equal(fused.source_index, [0, 0])
    assert fused.cloud.frame == "world"


def test_hand_posed_accumulation():
    # Scan {(5,0,0)} with T_1 = (I, t=(1,0,0)): inverse transform gives (4,0,0).
    scan0 = PointCloud(np.array([[0.0, 0, 0]]))
    scan1 = PointCloud(np.array([[5.0, 0, 0]]))
    seq = ScanSequence((scan0, scan1), 10.0)
    poses = [PoseSE3.identity(), PoseSE3(np.eye(3), np.array([1.0, 0, 0]))]
    fused = accumulate(seq, poses)
    assert np.array_equal(fused.cloud.points, [[0.0, 0, 0], [4.0, 0, 0]])
    assert np.array_equal(fused.source_index, [0, 1])


def test_accumulation_cardinality():
    rng = np.random.default_rng(0)
    scans = [PointCloud(rng.normal(size=(rng.integers(5, 50), 3))) for _ in range(6)]
    seq = ScanSequence(tuple(scans), 10.0)
    poses = [PoseSE3.identity()] * 6
    fused = accumulate(seq, poses)
    assert len(fused) == sum(len(s) for s in scans)


def test_length_mismatch_rejected():
    seq = ScanSequence((PointCloud(np.zeros((1, 3))),), 10.0)
    with pytest.raises(InvalidInputError):
        accumulate(seq, [PoseSE3.identity(), PoseSE3.identity()])


# ------------------------------------------------------------------------ BPA


def test_minimal_triangle():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
    tris = ball_pivot(pts, up_normals(pts), [1.5])
    assert len(tris) == 1
    assert sorted(tris[0]) == [0, 1, 2]


def test_planar_grid_triangle_count():
    # n x m grid with ball radius 1.5 * spacing: exactly 2 (n-1)(m-1) triangles.
    n, m = 10, 8
    pts = planar_grid(n, m)
    tris = ball_pivot(pts, up_normals(pts), [1.5])
    assert len(tris) == 2 * (n - 1) * (m - 1)


@pytest.mark.parametrize("n,m", [(4, 4), (6, 3), (12, 5)])
def test_grid_counts_various(n, m):
    pts = planar_grid(n, m)
    tris = ball_pivot(pts, up_normals(pts), [1.5])
    assert len(tris) == 2 * (n - 1) * (m - 1)


def test_edge_manifoldness_and_no_duplicates():
    rng = np.random.default_rng(1)
    pts = planar_grid(15, 12, spacing=0.5)
    pts = pts + rng.normal(scale=0.02, size=pts.shape)  # rough plane
    tris = ball_pivot(pts, up_normals(pts), [0.75, 1.5])
    seen = set()
    edge_count = {}
    for t in tris:
        key = tuple(sorted(t))
        assert key not in seen
        seen.add(key)
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            e = (min(a, b), max(a, b))
            edge_count[e] = edge_count.get(e, 0) + 1
    assert max(edge_count.values()) <= 2


def test_vertex_positions_preserved():
    rng = np.random.default_rng(2)
    pts = planar_grid(10, 10, spacing=0.7)
    pts = pts + rng.normal(scale=0.01, size=pts.shape)
    fused = FusedCloud(PointCloud(pts, "world"), np.zeros(len(pts), dtype=np.int64))
    mesh = reconstruct_mesh(fused, BpaConfig(radii=(1.05,), dedup_voxel=None))
    # Bit-exact: every mesh vertex is one of the input points.
    assert np.array_equal(mesh.vertices, pts)
    used = np.unique(mesh.triangles)
    assert used.size > 0.9 * len(pts)


def test_deterministic():
    rng = np.random.default_rng(3)
    pts = planar_grid(8, 8)
    pts = pts + rng.normal(scale=0.05, size=pts.shape)
    a = ball_pivot(pts, up_normals(pts), [1.5])
    b = ball_pivot(pts, up_normals(pts), [1.5])
    assert np.array_equal(a, b)


def test_no_seed_raises_empty_mesh():
    pts = np.array([[0.0, 0, 0], [10.0, 0, 0], [0.0, 10, 0]])  # too far apart
    with pytest.raises(EmptyMeshError):
        ball_pivot(pts, up_normals(pts), [1.0])


def test_multi_radius_fills_sparse_regions():
    # Dense patch plus a sparser patch: the small radius meshes the dense part
    # only (sparse circumradius ~0.99 > 0.75), the larger radius extends it.
    dense = planar_grid(8, 8, spacing=0.5)
    sparse = planar_grid(4, 8, spacing=1.4) + np.array([4.2, 0.0, 0.0])
    pts = np.concatenate([dense, sparse])
    single = ball_pivot(pts, up_normals(pts), [0.75])
    multi = ball_pivot(pts, up_normals(pts), [0.75, 2.2])
    used_single = np.unique(single).size
    used_multi = np.unique(multi).size
    assert used_single <= len(dense) + 8  # a few interface points at most
    assert used_multi == len(pts)


def test_isolated_points_stay_unreferenced():
    pts = np.concatenate([planar_grid(5, 5), [[100.0, 100.0, 0.0]]])
    fused = FusedCloud(PointCloud(pts, "world"), np.zeros(len(pts), dtype=np.int64))
    mesh = reconstruct_mesh(fused, BpaConfig(radii=(1.5,), dedup_voxel=None))
    stats = mesh_stats(mesh)
    assert stats.unreferenced >= 1
    assert len(pts) - 1 not in np.unique(mesh.triangles)


def test_normals_orientation():
    pts = planar_grid(6, 6)
    normals = estimate_normals(pts, k=8)
    assert np.all(normals[:, 2] > 0.9)  # flat grid: straight up
    # Vertical wall: normals point toward the interior hint.
    wall = np.stack([np.zeros(30), np.repeat(np.arange(6), 5),
                     np.tile(np.arange(5), 6)], axis=1).astype(float)
    wn = estimate_normals(wall, k=8, interior_hint=[5.0, 2.5, 2.0])
    assert np.all(wn[:, 0] > 0.9)


def test_bpa_config_validation():
    with pytest.raises(InvalidInputError):
        BpaConfig(radii=(1.0, 0.5))
    with pytest.raises(InvalidInputError):
        BpaConfig(radii=())
    with pytest.raises(InvalidInputError):
        BpaConfig(dedup_voxel=0.0)


def test_dedup_keeps_original_positions():
    rng = np.random.default_rng(4)
    base = planar_grid(6, 6, spacing=0.6)
    jitter = base + rng.normal(scale=0.01, size=base.shape)
    pts = np.concatenate([base, jitter])
    fused = FusedCloud(PointCloud(pts, "world"), np.zeros(len(pts), dtype=np.int64))
    mesh = reconstruct_mesh(fused, BpaConfig(radii=(0.9,), dedup_voxel=0.05))
    rows = {tuple(v) for v in pts}
    assert all(tuple(v) in rows for v in mesh.vertices)
