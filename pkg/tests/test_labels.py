"""Waypoint label and controller tests."""

import math

import numpy as np
import pytest

from lidarsynth.errors import InvalidInputError
from lidarsynth.geometry import PoseSE3
from lidarsynth.labels import (
    ControlCommand,
    LabelConfig,
    PidConfig,
    PidState,
    WaypointLabel,
    natural_cubic_spline,
    offset_label,
    reference_label,
    waypoints_to_control,
)
from lidarsynth.synthesis import offset_pose


def straight_trajectory(n, spacing=1.0):
    """Sensor driving +x at `spacing` per step; world-to-sensor poses."""
    return [PoseSE3(np.eye(3), -np.array([i * spacing, 0.0, 0.0])) for i in range(n)]


def arc_trajectory(n, radius, step_angle):
    poses = []
    for i in range(n):
        beta = i * step_angle
        pos = np.array([radius * math.sin(beta), radius * (1 - math.cos(beta)), 0.0])
        c, s = math.cos(beta), math.sin(beta)
        sensor_to_world = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        world_to_sensor = sensor_to_world.T
        poses.append(PoseSE3(world_to_sensor, -world_to_sensor @ pos))
    return poses


def test_straight_line_reference_label():
    traj = straight_trajectory(30)
    label = reference_label(traj, 0, LabelConfig(frame_skip=5))
    np.testing.assert_allclose(label.waypoints, [[5, 0], [10, 0], [15, 0], [20, 0]],
                               atol=1e-12)


def test_static_trajectory_label_is_zero():
    traj = [PoseSE3.identity()] * 25
    label = reference_label(traj, 0, LabelConfig(frame_skip=5))
    np.testing.assert_allclose(label.waypoints, np.zeros((4, 2)), atol=1e-15)


def test_arc_waypoints_on_circle():
    radius = 40.0
    traj = arc_trajectory(40, radius, step_angle=0.02)
    label = reference_label(traj, 3, LabelConfig(frame_skip=5))
    # In the local frame the path is a circle of radius R through the origin,
    # centered at (0, R) (curving right).
    center = np.array([0.0, radius])
    for w in label.waypoints:
        assert abs(np.linalg.norm(w - center) - radius) < 1e-9


def test_out_of_range_timestep():
    traj = straight_trajectory(10)
    with pytest.raises(IndexError):
        reference_label(traj, 0, LabelConfig(frame_skip=5))


def test_spline_passes_through_knots():
    rng = np.random.default_rng(0)
    for _ in range(20):
        ys = rng.normal(size=3)
        out = natural_cubic_spline([0.0, 3.0, 4.0], ys, [0.0, 3.0, 4.0])
        np.testing.assert_allclose(out, ys, atol=1e-12)


def test_spline_linear_data_is_exact():
    out = natural_cubic_spline([0.0, 3.0, 4.0], [0.0, 15.0, 20.0], [1.0, 2.0])
    np.testing.assert_allclose(out, [5.0, 10.0], atol=1e-12)


def test_offset_zero_matches_reference_on_straight():
    traj = straight_trajectory(30)
    cfg = LabelConfig(frame_skip=5)
    ref = reference_label(traj, 0, cfg)
    off = offset_label(traj, 0, traj[0], cfg)
    # Collinear case: the spline reproduces the direct waypoints exactly.
    np.testing.assert_allclose(off.waypoints, ref.waypoints, atol=1e-9)


def test_offset_label_straight_line():
    traj = straight_trajectory(30)
    cfg = LabelConfig(frame_skip=5)
    vp = offset_pose(traj[0], 2.0)
    label = offset_label(traj, 0, vp, cfg)
    # Reference path is 2 m to the left in the offset frame.
    np.testing.assert_allclose(label.waypoints[2], [15.0, -2.0], atol=1e-12)
    np.testing.assert_allclose(label.waypoints[3], [20.0, -2.0], atol=1e-12)
    # w1, w2 steer smoothly toward the reference line: |y| decreasing.
    y = [0.0, label.waypoints[0][1], label.waypoints[1][1], -2.0]
    assert y[1] < 0 and y[2] < 0
    assert abs(y[1]) < abs(y[2]) < 2.0


def test_offset_label_static_degenerate():
    traj = [PoseSE3.identity()] * 25
    vp = offset_pose(traj[0], 1.0)
    label = offset_label(traj, 0, vp, LabelConfig(frame_skip=5))
    np.testing.assert_allclose(label.waypoints[2], [0.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(label.waypoints[3], [0.0, -1.0], atol=1e-12)
    assert np.all(np.isfinite(label.waypoints))


def test_offset_continuity_to_reference():
    traj = straight_trajectory(40)
    cfg = LabelConfig(frame_skip=5)
    ref = reference_label(traj, 2, cfg).waypoints
    diffs = []
    for off in (1e-3, 1e-6):
        lab = offset_label(traj, 2, offset_pose(traj[2], off), cfg).waypoints
        diffs.append(np.abs(lab - ref).max())
    assert diffs[1] < diffs[0]
    assert diffs[1] < 1e-5


def test_labels_rigid_invariant():
    rng = np.random.default_rng(1)
    cfg = LabelConfig(frame_skip=5)
    for traj in (straight_trajectory(30), arc_trajectory(30, 50.0, 0.02)):
        base_ref = reference_label(traj, 1, cfg).waypoints
        base_off = offset_label(traj, 1, offset_pose(traj[1], 1.5), cfg).waypoints
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        g = PoseSE3(q, rng.normal(scale=20.0, size=3))
        moved = [p.compose(g.inverse()) for p in traj]
        ref2 = reference_label(moved, 1, cfg).waypoints
        off2 = offset_label(moved, 1, offset_pose(moved[1], 1.5), cfg).waypoints
        assert np.abs(ref2 - base_ref).max() < 1e-9
        assert np.abs(off2 - base_off).max() < 1e-9


# ------------------------------------------------------------------ controller


def test_straight_ahead_zero_steering():
    label = WaypointLabel(np.array([[5.0, 0], [10.0, 0], [15.0, 0], [20.0, 0]]))
    cfg = PidConfig()
    desired = cfg.target_speed_scale * 5.0 / cfg.waypoint_dt
    cmd, state = waypoints_to_control(label, desired, PidState(), cfg)
    assert cmd.steering == 0.0
    assert cmd.brake == 0
    # Zero speed error with zero accumulators: throttle is the Ki-only term (0).
    assert cmd.throttle == 0.0
    assert state.lateral_integral == 0.0


def test_hard_right_saturates():
    label = WaypointLabel(np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 2.0], [0.0, 3.0]]))
    cmd, _ = waypoints_to_control(label, 1.0, PidState(), PidConfig())
    assert cmd.steering == 1.0


def test_all_zero_label_brakes():
    label = WaypointLabel(np.zeros((4, 2)))
    cmd, _ = waypoints_to_control(label, 0.0, PidState(), PidConfig())
    assert cmd.brake == 1
    assert cmd.throttle == 0.0


def test_output_ranges_random_labels():
    rng = np.random.default_rng(2)
    cfg = PidConfig()
    state = PidState()
    for _ in range(2000):
        label = WaypointLabel(rng.normal(scale=10.0, size=(4, 2)))
        cmd, state = waypoints_to_control(label, float(rng.uniform(0, 30)), state, cfg)
        assert -1.0 <= cmd.steering <= 1.0
        assert 0.0 <= cmd.throttle <= 1.0
        assert cmd.brake in (0, 1)


def test_control_command_validation():
    with pytest.raises(InvalidInputError):
        ControlCommand(steering=2.0, throttle=0.0, brake=0)
    with pytest.raises(InvalidInputError):
        ControlCommand(steering=0.0, throttle=0.0, brake=2)


def test_label_validation():
    with pytest.raises(InvalidInputError):
        WaypointLabel(np.zeros((3, 2)))
    with pytest.raises(InvalidInputError):
        WaypointLabel(np.full((4, 2), np.nan))


def test_pid_config_validation():
    with pytest.raises(InvalidInputError):
        PidConfig(lateral_gains=(-1.0, 0.0, 0.0))
    with pytest.raises(InvalidInputError):
        LabelConfig(frame_skip=0)
