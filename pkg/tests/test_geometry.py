"""Tests for core geometry: poses, clouds, meshes, rigid transforms."""

import numpy as np
import pytest

from lidarsynth.errors import InvalidInputError
from lidarsynth.geometry import (
    PointCloud,
    PoseSE3,
    TriangleMesh,
    as_point3,
    transform_cloud,
)


def random_pose(rng):
    # Random rotation via QR of a Gaussian matrix, det fixed to +1.
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return PoseSE3(q, rng.normal(scale=5.0, size=3))


def test_identity_transform_is_noop():
    cloud = PointCloud(np.array([[1.0, 2.0, 3.0], [-4.0, 0.0, 2.5]]))
    out = transform_cloud(cloud, PoseSE3.identity())
    assert np.array_equal(out.points, cloud.points)
    assert out.frame == cloud.frame


def test_pure_translation_inverse():
    cloud = PointCloud(np.array([[1.0, 0.0, 0.0]]))
    pose = PoseSE3(np.eye(3), np.array([1.0, 0.0, 0.0]))
    out = transform_cloud(cloud, pose, "inverse")
    assert np.allclose(out.points, [[0.0, 0.0, 0.0]])


@pytest.mark.parametrize("seed", range(5))
def test_forward_inverse_round_trip(seed):
    rng = np.random.default_rng(seed)
    cloud = PointCloud(rng.normal(scale=10.0, size=(100, 3)))
    pose = random_pose(rng)
    back = transform_cloud(transform_cloud(cloud, pose, "forward"), pose, "inverse")
    err = np.linalg.norm(back.points - cloud.points, axis=1)
    assert err.max() < 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_se3_group_laws(seed):
    rng = np.random.default_rng(100 + seed)
    a = random_pose(rng)
    b = random_pose(rng)
    ident = a.compose(a.inverse())
    assert np.abs(ident.rotation - np.eye(3)).max() < 1e-9
    assert np.abs(ident.translation).max() < 1e-9
    pts = rng.normal(size=(20, 3))
    composed = a.compose(b).apply(pts)
    sequential = a.apply(b.apply(pts))
    assert np.abs(composed - sequential).max() < 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_transform_preserves_pairwise_distances(seed):
    rng = np.random.default_rng(200 + seed)
    pose = random_pose(rng)
    pts = rng.normal(scale=20.0, size=(50, 3))
    moved = pose.apply(pts)
    d_before = np.linalg.norm(pts[1:] - pts[:-1], axis=1)
    d_after = np.linalg.norm(moved[1:] - moved[:-1], axis=1)
    assert np.abs(d_before - d_after).max() < 1e-9


def test_pose_rejects_non_orthonormal():
    with pytest.raises(InvalidInputError):
        PoseSE3(np.eye(3) * 1.01, np.zeros(3))


def test_pose_rejects_reflection():
    r = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(InvalidInputError):
        PoseSE3(r, np.zeros(3))


def test_pose_rejects_non_finite():
    t = np.array([np.nan, 0.0, 0.0])
    with pytest.raises(InvalidInputError):
        PoseSE3(np.eye(3), t)


def test_cloud_rejects_nan():
    with pytest.raises(InvalidInputError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))


def test_cloud_rejects_bad_shape():
    with pytest.raises(InvalidInputError):
        PointCloud(np.zeros((3, 2)))


def test_empty_cloud_is_valid():
    cloud = PointCloud(np.zeros((0, 3)))
    assert len(cloud) == 0


def test_mesh_rejects_out_of_range_index():
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    with pytest.raises(InvalidInputError):
        TriangleMesh(verts, np.array([[0, 1, 3]]))


def test_mesh_rejects_degenerate_triangle():
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    with pytest.raises(InvalidInputError):
        TriangleMesh(verts, np.array([[0, 1, 2]]))


def test_mesh_accepts_quad():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0]])
    mesh = TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))
    assert mesh.triangle_count == 2


def test_as_point3_validates():
    with pytest.raises(InvalidInputError):
        as_point3([1.0, 2.0])
    with pytest.raises(InvalidInputError):
        as_point3([1.0, np.inf, 0.0])
    p = as_point3((1, 2, 3))
    assert p.dtype == np.float64


def test_transform_cloud_rejects_bad_direction():
    cloud = PointCloud(np.zeros((1, 3)))
    with pytest.raises(InvalidInputError):
        transform_cloud(cloud, PoseSE3.identity(), "sideways")


def test_pose_origin_is_sensor_position():
    # World-to-sensor pose of a sensor sitting at (3, -1, 2) with identity heading.
    pose = PoseSE3(np.eye(3), -np.array([3.0, -1.0, 2.0]))
    assert np.allclose(pose.origin(), [3.0, -1.0, 2.0])
