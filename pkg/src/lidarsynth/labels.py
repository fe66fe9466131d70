"""Waypoint labels and the waypoint-following controller.

A label is four 2D waypoints in the labeled viewpoint's frame (x forward,
y right, implicit w0 at the origin): positions of the poses k, 2k, 3k, 4k
frames ahead on the reference trajectory. Off-trajectory viewpoints keep the
reference poses for w3 and w4 and fill w1, w2 with a natural cubic spline
through (0, 0), w3, w4 parameterized by waypoint index {0, 3, 4}, so the
labeled path steers smoothly from the offset position back onto the
reference trajectory.

The controller maps waypoints to steering/throttle/brake with two PID loops:
heading error toward the midpoint of w1 and w2 (normalized so full lock is
70 degrees), and speed error against the spacing-implied desired speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import PoseSE3

FULL_LOCK_RAD = math.radians(70.0)


@dataclass(frozen=True)
class LabelConfig:
    frame_skip: int = 5

    def __post_init__(self):
        if self.frame_skip < 1:
            raise InvalidInputError("frame skip must be >= 1")


@dataclass(frozen=True)
class WaypointLabel:
    """w1..w4 in the local frame, meters; w0 = (0, 0) by construction."""

    waypoints: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=np.float64)
        if w.shape != (4, 2):
            raise InvalidInputError(f"label must be (4, 2), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("label contains non-finite values")
        w = np.ascontiguousarray(w)
        w.setflags(write=False)
        object.__setattr__(self, "waypoints", w)


def _future_xy(trajectory, i, k, frame_pose: PoseSE3):
    """x, y of poses i+k..i+4k expressed in frame_pose's local frame."""
    n = len(trajectory)
    if i < 0 or i + 4 * k >= n:
        raise IndexError(
            f"timestep {i} with frame skip {k} needs pose {i + 4 * k}, "
            f"trajectory has {n}")
    out = np.empty((4, 2))
    for m in (1, 2, 3, 4):
        origin_world = trajectory[i + m * k].origin()
        local = frame_pose.apply(origin_world)
        out[m - 1] = local[:2]
    return out


def reference_label(trajectory, i: int, cfg: LabelConfig = LabelConfig()) -> WaypointLabel:
    """Label for a pose on the reference trajectory: future poses, directly."""
    return WaypointLabel(_future_xy(trajectory, i, cfg.frame_skip, trajectory[i]))


def natural_cubic_spline(knots_x, knots_y, queries):
    """Natural cubic spline through (knots_x, knots_y), evaluated at queries.

    Zero second derivative at both ends; exact at the knots. Accepts any
    strictly increasing knot parameterization.
    """
    x = np.asarray(knots_x, dtype=np.float64)
    y = np.asarray(knots_y, dtype=np.float64)
    n = len(x)
    if n < 2 or np.any(np.diff(x) <= 0):
        raise InvalidInputError("spline needs >= 2 strictly increasing knots")
    h = np.diff(x)
    # Solve for second derivatives (natural boundary: m0 = m_{n-1} = 0).
    m = np.zeros(n)
    if n > 2:
        a = np.zeros((n - 2, n - 2))
        rhs = np.empty(n - 2)
        for r in range(n - 2):
            if r > 0:
                a[r, r - 1] = h[r]
            a[r, r] = 2.0 * (h[r] + h[r + 1])
            if r < n - 3:
                a[r, r + 1] = h[r + 1]
            rhs[r] = 6.0 * ((y[r + 2] - y[r + 1]) / h[r + 1] - (y[r + 1] - y[r]) / h[r])
        m[1:-1] = np.linalg.solve(a, rhs)
    q = np.asarray(queries, dtype=np.float64)
    seg = np.clip(np.searchsorted(x, q, side="right") - 1, 0, n - 2)
    t = q - x[seg]
    hs = h[seg]
    return (m[seg] / (6 * hs) * (hs - t) ** 3 + m[seg + 1] / (6 * hs) * t ** 3
            + (y[seg] / hs - m[seg] * hs / 6) * (hs - t)
            + (y[seg + 1] / hs - m[seg + 1] * hs / 6) * t)


_DEGENERATE_KNOTS = 1e-9


def offset_label(trajectory, i: int, offset_pose: PoseSE3,
                 cfg: LabelConfig = LabelConfig()) -> WaypointLabel:
    """Label for an off-trajectory viewpoint.

    w3 and w4 are the reference poses 3k and 4k ahead, expressed in the
    offset frame; w1 and w2 come from a natural cubic spline through the
    knots {(0, origin), (3, w3), (4, w4)} evaluated at indices 1 and 2.
    """
    future = _future_xy(trajectory, i, cfg.frame_skip, offset_pose)
    w3, w4 = future[2], future[3]
    if max(np.linalg.norm(w3), np.linalg.norm(w4 - w3)) < _DEGENERATE_KNOTS:
        # All knots coincide at the origin: constant path.
        return WaypointLabel(np.zeros((4, 2)))
    knots_s = np.array([0.0, 3.0, 4.0])
    queries = np.array([1.0, 2.0])
    w1x_w2x = natural_cubic_spline(knots_s, [0.0, w3[0], w4[0]], queries)
    w1y_w2y = natural_cubic_spline(knots_s, [0.0, w3[1], w4[1]], queries)
    label = np.empty((4, 2))
    label[0] = (w1x_w2x[0], w1y_w2y[0])
    label[1] = (w1x_w2x[1], w1y_w2y[1])
    label[2] = w3
    label[3] = w4
    return WaypointLabel(label)


# ------------------------------------------------------------------ controller


@dataclass(frozen=True)
class ControlCommand:
    steering: float  # [-1, 1], +1 = full right lock (70 degrees)
    throttle: float  # [0, 1]
    brake: int       # 0 or 1

    def __post_init__(self):
        if not -1.0 <= self.steering <= 1.0:
            raise InvalidInputError("steering out of [-1, 1]")
        if not 0.0 <= self.throttle <= 1.0:
            raise InvalidInputError("throttle out of [0, 1]")
        if self.brake not in (0, 1):
            raise InvalidInputError("brake must be 0 or 1")


@dataclass(frozen=True)
class PidConfig:
    lateral_gains: tuple = (1.0, 0.05, 0.2)       # Kp, Ki, Kd on heading error
    longitudinal_gains: tuple = (0.5, 0.05, 0.1)  # Kp, Ki, Kd on speed error
    target_speed_scale: float = 1.0
    brake_threshold: float = 0.4  # m/s
    tick: float = 0.1             # controller period, seconds
    waypoint_dt: float = 0.5      # time between consecutive waypoints, seconds

    def __post_init__(self):
        if any(g < 0 for g in self.lateral_gains + self.longitudinal_gains):
            raise InvalidInputError("PID gains must be >= 0")
        if self.tick <= 0 or self.waypoint_dt <= 0:
            raise InvalidInputError("time bases must be positive")


@dataclass(frozen=True)
class PidState:
    """Explicit controller memory; thread one instance per vehicle."""

    lateral_integral: float = 0.0
    lateral_prev_error: float = 0.0
    longitudinal_integral: float = 0.0
    longitudinal_prev_error: float = 0.0


def _pid(error, integral, prev_error, gains, dt):
    kp, ki, kd = gains
    integral = integral + error * dt
    derivative = (error - prev_error) / dt
    return kp * error + ki * integral + kd * derivative, integral


def waypoints_to_control(label: WaypointLabel, speed: float, state: PidState,
                         cfg: PidConfig = PidConfig()) -> tuple[ControlCommand, PidState]:
    """Map a waypoint label to (steering, throttle, brake) plus updated PID state.

    Aim point = midpoint of w1 and w2; heading error = atan2(aim_y, aim_x),
    normalized by the 70-degree full lock before the lateral PID. Desired
    speed = scale * mean(|w1|, |w2 - w1|) / waypoint_dt; brake engages when
    the desired speed falls below the threshold.
    """
    if speed < 0:
        raise InvalidInputError("speed must be >= 0")
    w = label.waypoints
    aim = 0.5 * (w[0] + w[1])
    heading_error = math.atan2(aim[1], aim[0]) / FULL_LOCK_RAD
    steer_raw, lat_int = _pid(heading_error, state.lateral_integral,
                              state.lateral_prev_error, cfg.lateral_gains, cfg.tick)
    steering = float(np.clip(steer_raw, -1.0, 1.0))

    seg = 0.5 * (np.linalg.norm(w[0]) + np.linalg.norm(w[1] - w[0]))
    desired = cfg.target_speed_scale * seg / cfg.waypoint_dt
    if desired < cfg.brake_threshold:
        new_state = PidState(lat_int, heading_error,
                             state.longitudinal_integral, state.longitudinal_prev_error)
        return ControlCommand(steering, 0.0, 1), new_state

    speed_error = desired - speed
    throttle_raw, lon_int = _pid(speed_error, state.longitudinal_integral,
                                 state.longitudinal_prev_error,
                                 cfg.longitudinal_gains, cfg.tick)
    throttle = float(np.clip(throttle_raw, 0.0, 1.0))
    new_state = PidState(lat_int, heading_error, lon_int, speed_error)
    return ControlCommand(steering, throttle, 0), new_state
