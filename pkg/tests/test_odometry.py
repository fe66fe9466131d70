"""ICP tests: known-transform recovery, invariants, trajectory oracle via testbed."""

import math

import numpy as np
import pytest

from lidarsynth.errors import DegenerateGeometryError, InvalidInputError
from lidarsynth.fileio import ScanSequence
from lidarsynth.geometry import PointCloud, PoseSE3
from lidarsynth.odometry import IcpConfig, Trajectory, estimate_trajectory, icp_align
from lidarsynth.spatial import voxel_downsample
from lidarsynth.synthesis import NoiseConfig, default_beam_model
from lidarsynth.testbed import generate_scene, simulate_sequence, trajectory_errors


def structured_cloud(rng, n=4000):
    """Geometry-rich cloud: a bumpy ground patch plus a few box clusters."""
    ground = rng.uniform([-10, -10, 0], [10, 10, 0.05], size=(n // 2, 3))
    boxes = []
    for cx, cy in [(-5, -4), (3, 6), (6, -5), (-2, 2)]:
        boxes.append(rng.uniform([cx, cy, 0], [cx + 1.5, cy + 1.5, 2.0], size=(n // 8, 3)))
    return PointCloud(np.concatenate([ground] + boxes))


def rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def test_voxel_downsample_modes():
    pts = np.array([[0.01, 0.0, 0.0], [0.02, 0.0, 0.0], [1.5, 0.0, 0.0]])
    first = voxel_downsample(pts, 1.0, "first")
    assert np.array_equal(first, [[0.01, 0.0, 0.0], [1.5, 0.0, 0.0]])
    cent = voxel_downsample(pts, 1.0, "centroid")
    assert np.allclose(sorted(cent[:, 0]), [0.015, 1.5])


def test_self_alignment_is_identity():
    rng = np.random.default_rng(0)
    cloud = structured_cloud(rng)
    result = icp_align(cloud, cloud, cfg=IcpConfig(voxel_size=None))
    assert np.abs(result.pose.rotation - np.eye(3)).max() < 1e-9
    assert np.abs(result.pose.translation).max() < 1e-9
    assert result.mean_residual < 1e-9


def test_recovers_translation():
    rng = np.random.default_rng(1)
    cloud = structured_cloud(rng)
    shift = np.array([1.0, 0.2, 0.0])
    target = PointCloud(cloud.points + shift)
    cfg = IcpConfig(voxel_size=None, max_correspondence_distance=3.0, max_iterations=100)
    result = icp_align(cloud, target, cfg=cfg)
    assert np.abs(result.pose.translation - shift).max() < 1e-3
    assert np.abs(result.pose.rotation - np.eye(3)).max() < 1e-3


def test_recovers_rotation_and_translation():
    rng = np.random.default_rng(2)
    cloud = structured_cloud(rng)
    r = rot_z(math.radians(5.0))
    t = np.array([0.5, 0.0, 0.0])
    target = PointCloud(cloud.points @ r.T + t)
    cfg = IcpConfig(voxel_size=None, max_correspondence_distance=3.0, max_iterations=100)
    result = icp_align(cloud, target, cfg=cfg)
    rel = result.pose.rotation @ r.T
    angle_err = math.degrees(math.acos(np.clip((np.trace(rel) - 1) / 2, -1, 1)))
    assert angle_err < 0.1
    assert np.abs(result.pose.translation - t).max() < 1e-2


def test_residual_monotone_on_full_overlap():
    rng = np.random.default_rng(3)
    cloud = structured_cloud(rng)
    target = PointCloud(cloud.points @ rot_z(0.03).T + np.array([0.4, -0.1, 0.0]))
    cfg = IcpConfig(voxel_size=None, max_correspondence_distance=100.0,
                    convergence_threshold=1e-9, max_iterations=60)
    result = icp_align(cloud, target, cfg=cfg)
    res = np.array(result.residuals)
    assert np.all(np.diff(res) <= 1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_equivariance_under_common_rigid_transform(seed):
    rng = np.random.default_rng(40 + seed)
    cloud = structured_cloud(rng, n=2000)
    target = PointCloud(cloud.points @ rot_z(0.05).T + np.array([0.3, 0.1, 0.0]))
    cfg = IcpConfig(voxel_size=None, max_correspondence_distance=100.0,
                    convergence_threshold=1e-12, max_iterations=30)
    base = icp_align(cloud, target, cfg=cfg).pose

    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    g = PoseSE3(q, rng.normal(size=3))
    moved_src = PointCloud(g.apply(cloud.points))
    moved_tgt = PointCloud(g.apply(target.points))
    conj = icp_align(moved_src, moved_tgt, initial=g.compose(PoseSE3.identity()).compose(g.inverse()),
                     cfg=cfg).pose
    expected = g.compose(base).compose(g.inverse())
    assert np.abs(conj.rotation - expected.rotation).max() < 1e-6
    assert np.abs(conj.translation - expected.translation).max() < 1e-6


def test_degenerate_when_too_few_points():
    tiny = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
    with pytest.raises(DegenerateGeometryError):
        icp_align(tiny, tiny, cfg=IcpConfig(voxel_size=None))


def test_trajectory_requires_identity_start():
    with pytest.raises(InvalidInputError):
        Trajectory((PoseSE3(np.eye(3), np.array([1.0, 0, 0])),))


def test_static_sequence_gives_identity_trajectory():
    rng = np.random.default_rng(5)
    scan = structured_cloud(rng, n=2000)
    seq = ScanSequence((scan,) * 4, 10.0)
    traj = estimate_trajectory(seq)
    for pose in traj:
        assert np.abs(pose.rotation - np.eye(3)).max() < 1e-6
        assert np.abs(pose.translation).max() < 1e-6


@pytest.mark.parametrize("kind", ["straight", "arc"])
def test_trajectory_recovery_on_testbed(kind):
    # Reduced-scale version of the acceptance criterion: 15 scans, noisy.
    scene = generate_scene(kind, length=14.0, seed=1)
    model = default_beam_model(azimuth_count=512, channels=32)
    seq = simulate_sequence(scene, model, NoiseConfig(sigma=0.02, drop_probability=0.2, seed=2))
    traj = estimate_trajectory(seq, workers=2)
    trans, rot = trajectory_errors(traj, scene.trajectory)
    assert trans.max() < 0.05
    assert rot.max() < 0.5
    path_len = scene.length
    assert trans[-1] < 0.01 * path_len


def test_failing_pair_is_named():
    rng = np.random.default_rng(6)
    good = structured_cloud(rng, n=2000)
    bad = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
    seq = ScanSequence((good, bad, good), 10.0)
    with pytest.raises(DegenerateGeometryError, match=r"pair \(0, 1\)"):
        estimate_trajectory(seq)


def test_icp_config_validation():
    with pytest.raises(InvalidInputError):
        IcpConfig(max_iterations=0)
    with pytest.raises(InvalidInputError):
        IcpConfig(voxel_size=-0.1)
