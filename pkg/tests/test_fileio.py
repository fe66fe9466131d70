"""Round-trip and malformed-input tests for PLY, manifests, trajectories, datasets."""

import numpy as np
import pytest

from lidarsynth.errors import InvalidInputError, PlyParseError
from lidarsynth.fileio import (
    DatasetSample,
    ScanSequence,
    SequenceManifest,
    export_dataset,
    load_sequence,
    read_cloud,
    read_dataset_index,
    read_manifest,
    read_mesh,
    read_trajectory,
    write_cloud,
    write_manifest,
    write_mesh,
    write_trajectory,
)
from lidarsynth.geometry import PointCloud, PoseSE3, TriangleMesh


def test_ascii_cloud_reads_exact_values(tmp_path):
    path = tmp_path / "three.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
        "1.5 2.25 -3\n0 0 0\n1e3 -2.5 0.125\n"
    )
    cloud = read_cloud(path)
    assert np.array_equal(
        cloud.points, [[1.5, 2.25, -3.0], [0.0, 0.0, 0.0], [1000.0, -2.5, 0.125]]
    )


@pytest.mark.parametrize("fmt", ["ascii", "binary"])
def test_cloud_round_trip_bit_identical(tmp_path, fmt):
    rng = np.random.default_rng(3)
    cloud = PointCloud(rng.normal(scale=50.0, size=(5000, 3)))
    path = tmp_path / "c.ply"
    write_cloud(cloud, path, format=fmt)
    back = read_cloud(path)
    assert np.array_equal(back.points, cloud.points)


def test_large_binary_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    cloud = PointCloud(rng.normal(scale=100.0, size=(1_000_000, 3)))
    path = tmp_path / "big.ply"
    write_cloud(cloud, path, format="binary")
    assert np.array_equal(read_cloud(path).points, cloud.points)


def test_empty_cloud_round_trip(tmp_path):
    path = tmp_path / "empty.ply"
    write_cloud(PointCloud(np.zeros((0, 3))), path)
    assert len(read_cloud(path)) == 0


def test_vertex_shortfall_is_parse_error(tmp_path):
    path = tmp_path / "short.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 10\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
        + "\n".join("0 0 0" for _ in range(9)) + "\n"
    )
    with pytest.raises(PlyParseError, match="declares 10"):
        read_cloud(path)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        read_cloud(tmp_path / "nope.ply")


def test_extra_property_rejected(tmp_path):
    path = tmp_path / "extra.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float intensity\nend_header\n0 0 0 1\n"
    )
    with pytest.raises(PlyParseError):
        read_cloud(path)


def test_nan_cloud_unconstructible():
    # write_cloud can never see a NaN cloud: construction already rejects it.
    with pytest.raises(InvalidInputError):
        PointCloud(np.array([[np.nan, 0.0, 0.0]]))


@pytest.mark.parametrize("fmt", ["ascii", "binary"])
def test_mesh_round_trip(tmp_path, fmt):
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0]])
    mesh = TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))
    path = tmp_path / "quad.ply"
    write_mesh(mesh, path, format=fmt)
    back = read_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)


def test_face_index_out_of_range(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text(
        "ply\nformat ascii 1.0\n"
        "element vertex 10\nproperty float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        + "\n".join(f"{i} 0 0" for i in range(10))
        + "\n3 0 1 999\n"
    )
    with pytest.raises(PlyParseError, match="999"):
        read_mesh(path)


def test_manifest_round_trip(tmp_path):
    scan = tmp_path / "scan_0000.ply"
    write_cloud(PointCloud(np.array([[1.0, 2, 3]])), scan)
    manifest = SequenceManifest((scan,), 10.0, "default-64")
    mpath = tmp_path / "manifest.txt"
    write_manifest(manifest, mpath)
    back = read_manifest(mpath)
    assert back.frequency_hz == 10.0
    assert back.preset == "default-64"
    seq = load_sequence(back)
    assert len(seq) == 1
    assert np.array_equal(seq.scans[0].points, [[1.0, 2.0, 3.0]])


def test_manifest_missing_scan(tmp_path):
    mpath = tmp_path / "manifest.txt"
    mpath.write_text("frequency_hz=10\nmissing.ply\n")
    with pytest.raises(FileNotFoundError, match="missing.ply"):
        read_manifest(mpath)


def test_sequence_rejects_bad_frequency():
    with pytest.raises(InvalidInputError):
        ScanSequence((), 0.0)


def test_trajectory_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    poses = []
    for _ in range(5):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        poses.append(PoseSE3(q, rng.normal(size=3)))
    path = tmp_path / "traj.txt"
    write_trajectory(poses, path)
    back = read_trajectory(path)
    assert len(back) == 5
    for p, b in zip(poses, back):
        assert np.array_equal(p.rotation, b.rotation)
        assert np.array_equal(p.translation, b.translation)


def _sample(seq_id, timestep, offset, rng):
    pts = np.abs(rng.normal(size=(20, 3)))  # x >= 0 frontal crop
    wps = rng.normal(size=(4, 2))
    return DatasetSample(PointCloud(pts), wps, seq_id, timestep, offset)


def test_export_single_sample(tmp_path):
    rng = np.random.default_rng(0)
    sample = _sample(0, 0, 0.0, rng)
    index = export_dataset([sample], tmp_path / "ds")
    assert (tmp_path / "ds" / "seq0_t0_off+0.0.ply").exists()
    rows = read_dataset_index(index)
    assert len(rows) == 1
    sid, wp, seq, t, off = rows[0]
    assert sid == "seq0_t0_off+0.0"
    assert wp.shape == (4, 2)
    assert (seq, t, off) == (0, 0, 0.0)
    np.testing.assert_allclose(wp, sample.waypoints, atol=1e-6)


def test_export_is_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    offsets = np.linspace(-2, 2, 11)
    samples = [_sample(0, t, o, rng) for t in range(3) for o in offsets]
    p1 = export_dataset(samples, tmp_path / "a")
    p2 = export_dataset(list(reversed(samples)), tmp_path / "b")
    assert p1.read_bytes() == p2.read_bytes()


def test_export_rejects_duplicates(tmp_path):
    rng = np.random.default_rng(2)
    samples = [_sample(0, 0, 0.0, rng), _sample(0, 0, 0.0, rng)]
    with pytest.raises(InvalidInputError, match="duplicate"):
        export_dataset(samples, tmp_path / "dup")


def test_sample_rejects_rear_points():
    with pytest.raises(InvalidInputError):
        DatasetSample(
            PointCloud(np.array([[-1.0, 0, 0]])), np.zeros((4, 2)), 0, 0, 0.0
        )


def test_sample_rejects_wrong_waypoint_count():
    with pytest.raises(InvalidInputError):
        DatasetSample(PointCloud(np.zeros((1, 3))), np.zeros((3, 2)), 0, 0, 0.0)


def test_eleven_offsets_over_many_timesteps(tmp_path):
    rng = np.random.default_rng(4)
    offsets = np.linspace(-2, 2, 11)
    samples = [_sample(0, t, o, rng) for t in range(30) for o in offsets]
    index = export_dataset(samples, tmp_path / "many")
    assert len(read_dataset_index(index)) == 330
