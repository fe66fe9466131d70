"""Nearest-neighbor index over a point cloud snapshot.

Backed by scipy's cKDTree for speed; `nearest` re-checks candidates with plain
numpy arithmetic so results match a brute-force scan exactly, ties going to the
lowest point index.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInputError
from .geometry import Point3, PointCloud, as_point3

_TIE_INFLATION = 1e-9


class KdIndex:
    """Immutable spatial index; safe to share across parallel workers."""

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise EmptyInputError("cannot index an empty point cloud")
        self._points = cloud.points
        self._tree = cKDTree(self._points)

    def __len__(self) -> int:
        return self._points.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self._points

    def nearest(self, query: Point3) -> tuple[int, float]:
        """Index and squared distance of the nearest point; exact, lowest index wins ties."""
        q = as_point3(query)
        d, _ = self._tree.query(q)
        radius = d * (1.0 + _TIE_INFLATION) + 1e-300
        candidates = np.sort(np.asarray(self._tree.query_ball_point(q, radius), dtype=np.int64))
        diffs = self._points[candidates] - q
        sq = np.einsum("ij,ij->i", diffs, diffs)
        best = int(np.argmin(sq))
        return int(candidates[best]), float(sq[best])

    def nearest_batch(self, queries: np.ndarray, max_distance: float | None = None,
                      workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Fast batched nearest lookup (exact distances, unspecified tie order).

        Returns (indices, distances); queries farther than `max_distance` from
        every point get index -1 and distance inf.
        """
        q = np.asarray(queries, dtype=np.float64)
        bound = np.inf if max_distance is None else max_distance
        d, i = self._tree.query(q, distance_upper_bound=bound, workers=workers)
        miss = ~np.isfinite(d)
        i = i.astype(np.int64)
        i[miss] = -1
        return i, d


def voxel_downsample(points: np.ndarray, size: float, reduce: str = "centroid") -> np.ndarray:
    """Collapse points into `size`-meter voxels, deterministically.

    reduce="centroid" returns per-voxel means ordered by voxel key (ICP
    downsampling); reduce="first" keeps the lowest-index original point per
    voxel in original order, so positions stay bit-exact (mesh deduplication).
    """
    pts = np.asarray(points, dtype=np.float64)
    if size <= 0:
        raise ValueError("voxel size must be positive")
    if len(pts) == 0:
        return pts.copy()
    keys = np.floor(pts / size).astype(np.int64)
    _, first_idx, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    if reduce == "first":
        # np.unique's return_index is the first occurrence in the original order.
        return pts[np.sort(first_idx)]
    if reduce != "centroid":
        raise ValueError(f"unknown reduce mode {reduce!r}")
    n_vox = first_idx.size
    sums = np.zeros((n_vox, 3))
    np.add.at(sums, inverse, pts)
    counts = np.bincount(inverse, minlength=n_vox)
    return sums / counts[:, None]
