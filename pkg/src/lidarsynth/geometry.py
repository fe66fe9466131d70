"""Core geometric types: rigid poses, point clouds, triangle meshes.

Coordinates follow the left-handed vehicle convention used everywhere in this
package: x forward, y right, z up, in meters. A pose stored as (R, t) maps a
point p to R @ p + t; trajectory poses are world-to-sensor transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

# A 3D point is a plain (3,) float64 array.
Point3 = np.ndarray

FRAME_SENSOR = "sensor"
FRAME_WORLD = "world"
_FRAMES = (FRAME_SENSOR, FRAME_WORLD)

ORTHONORMAL_TOL = 1e-9
DEGENERATE_TRIANGLE_AREA = 1e-12


def as_point3(value) -> Point3:
    """Coerce to a finite (3,) float64 array, raising InvalidInputError otherwise."""
    p = np.asarray(value, dtype=np.float64)
    if p.shape != (3,):
        raise InvalidInputError(f"expected a 3-vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidInputError(f"non-finite coordinates: {p}")
    return p


def _frozen(array, dtype=np.float64):
    out = np.ascontiguousarray(array, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform p -> rotation @ p + translation.

    The rotation must be orthonormal with determinant +1 (checked on
    construction within ORTHONORMAL_TOL). Instances are immutable and safe to
    share across workers.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InvalidInputError(
                f"pose shapes must be (3,3) and (3,), got {r.shape} and {t.shape}"
            )
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidInputError("pose has non-finite entries")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise InvalidInputError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidInputError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(matrix) -> "PoseSE3":
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidInputError(f"expected a 4x4 matrix, got shape {m.shape}")
        return PoseSE3(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """Return self ∘ other, the pose applying `other` first."""
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "PoseSE3":
        rt = self.rotation.T
        return PoseSE3(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or a batch (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.translation) @ self.rotation

    def origin(self) -> Point3:
        """Origin of the target frame expressed in source-frame coordinates (-Rᵀt).

        For a world-to-sensor pose this is the sensor position in the world.
        """
        return -self.rotation.T @ self.translation

    def equals(self, other: "PoseSE3") -> bool:
        """Bit-exact field equality."""
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def allclose(self, other: "PoseSE3", atol: float = 1e-9) -> bool:
        return np.allclose(self.rotation, other.rotation, atol=atol) and np.allclose(
            self.translation, other.translation, atol=atol
        )


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered (N, 3) set of finite points with a frame tag."""

    points: np.ndarray
    frame: str = FRAME_SENSOR

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.size == 0:
            p = p.reshape(0, 3)
        if p.ndim != 2 or p.shape[1] != 3:
            raise InvalidInputError(f"points must be (N, 3), got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("point cloud contains non-finite coordinates")
        if self.frame not in _FRAMES:
            raise InvalidInputError(f"unknown frame {self.frame!r}, expected one of {_FRAMES}")
        object.__setattr__(self, "points", _frozen(p))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle soup: (V, 3) vertices plus (T, 3) vertex-index triples.

    Every index must be a valid vertex and no triangle may be degenerate
    (area below DEGENERATE_TRIANGLE_AREA square meters).
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.size == 0:
            v = v.reshape(0, 3)
        if t.size == 0:
            t = t.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidInputError(f"vertices must be (V, 3), got shape {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise InvalidInputError(f"triangles must be (T, 3), got shape {t.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("mesh vertices contain non-finite coordinates")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InvalidInputError("triangle index out of vertex range")
        if t.size:
            a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
            areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
            if areas.min() < DEGENERATE_TRIANGLE_AREA:
                raise InvalidInputError(
                    f"{int((areas < DEGENERATE_TRIANGLE_AREA).sum())} degenerate triangle(s)"
                )
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t, dtype=np.int64))

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]


def transform_cloud(cloud: PointCloud, pose: PoseSE3, direction: str = "forward",
                    frame: str | None = None) -> PointCloud:
    """Apply a rigid transform to every point, preserving order.

    forward: p -> R p + t.  inverse: p -> Rᵀ (p - t).
    The frame tag is kept unless `frame` overrides it.
    """
    if direction == "forward":
        moved = pose.apply(cloud.points)
    elif direction == "inverse":
        moved = pose.apply_inverse(cloud.points)
    else:
        raise InvalidInputError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return PointCloud(moved, cloud.frame if frame is None else frame)
