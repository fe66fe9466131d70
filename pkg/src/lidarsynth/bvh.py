"""Bounding-volume hierarchy over mesh triangles with batched first-hit queries.

Median-split build over triangle centroids, flat array storage, and a
vectorized stack traversal so that casting tens of thousands of rays per call
stays a handful of numpy passes. The triangle test is Möller-Trumbore with
inclusive barycentric bounds, so rays crossing a shared edge hit both incident
triangles and ties resolve to the lowest triangle index.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .geometry import Point3, TriangleMesh, as_point3

# Determinant cutoff for parallel rays and inclusive barycentric slack.
DET_EPS = 1e-12
BARY_EPS = 1e-12
# Hits closer than this are rejected to avoid self-intersection at the origin.
T_MIN = 1e-6

UNIT_TOL = 1e-9
_MAX_DEPTH = 64
_TRI_SENTINEL = np.iinfo(np.int64).max


class Hit(NamedTuple):
    point: Point3
    t: float
    triangle: int


class BvhIndex:
    """Immutable AABB tree over a TriangleMesh; safe to share across workers."""

    def __init__(self, mesh: TriangleMesh, leaf_size: int = 8):
        if leaf_size < 1:
            raise InvalidInputError("leaf_size must be >= 1")
        self.mesh = mesh
        tris = mesh.triangles
        verts = mesh.vertices
        n = len(tris)
        if n == 0:
            raise InvalidInputError("cannot build a BVH over an empty mesh")

        a = verts[tris[:, 0]]
        b = verts[tris[:, 1]]
        c = verts[tris[:, 2]]
        tri_min = np.minimum(np.minimum(a, b), c)
        tri_max = np.maximum(np.maximum(a, b), c)
        centroids = (a + b + c) / 3.0

        order = np.arange(n)
        node_min, node_max = [], []
        node_child = []   # left-child index for internal nodes, -1 for leaves
        node_start, node_count = [], []

        # Iterative median split; children are allocated adjacently (right = left + 1).
        stack = [(0, n, -1, 0)]  # start, end, parent slot, depth
        self._depth = 0
        while stack:
            start, end, parent_slot, depth = stack.pop()
            self._depth = max(self._depth, depth)
            if depth >= _MAX_DEPTH:
                raise InvalidInputError("BVH depth limit exceeded")
            idx = order[start:end]
            node_id = len(node_min)
            node_min.append(tri_min[idx].min(axis=0))
            node_max.append(tri_max[idx].max(axis=0))
            if parent_slot >= 0:
                node_child[parent_slot] = node_id
            if end - start <= leaf_size:
                node_child.append(-1)
                node_start.append(start)
                node_count.append(end - start)
                continue
            cen = centroids[idx]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            mid = (end - start) // 2
            part = np.argpartition(cen[:, axis], mid)
            order[start:end] = idx[part]
            node_child.append(-2)  # patched when the left child is created
            node_start.append(start)
            node_count.append(0)
            # Push right first so the left child is created immediately after
            # its parent (keeps sibling pairs adjacent).
            stack.append((start + mid, end, -1, depth + 1))
            stack.append((start, start + mid, node_id, depth + 1))

        # Sibling adjacency: the right child of node with left child L is L + 1.
        # The build above interleaves, so record rights explicitly instead.
        self.node_min = np.ascontiguousarray(node_min)
        self.node_max = np.ascontiguousarray(node_max)
        self.node_child = np.asarray(node_child, dtype=np.int64)
        self.node_start = np.asarray(node_start, dtype=np.int64)
        self.node_count = np.asarray(node_count, dtype=np.int64)
        self._fix_right_children()

        self.leaf_size = leaf_size
        # Triangle data in build order for leaf tests.
        self.tri_index = order
        self.v0 = np.ascontiguousarray(a[order])
        self.e1 = np.ascontiguousarray(b[order] - a[order])
        self.e2 = np.ascontiguousarray(c[order] - a[order])

    def _fix_right_children(self):
        """Recover right-child ids: children were pushed right-then-left, so the
        right subtree of node i starts right after the left subtree's nodes."""
        n_nodes = len(self.node_child)
        right = np.full(n_nodes, -1, dtype=np.int64)
        # Subtree sizes via a reverse pass: leaves have size 1.
        size = np.ones(n_nodes, dtype=np.int64)
        for i in range(n_nodes - 1, -1, -1):
            left = self.node_child[i]
            if left >= 0:
                r = left + size[left]
                right[i] = r
                size[i] = 1 + size[left] + size[r]
        self.node_right = right

    # ------------------------------------------------------------------ queries

    def first_hit(self, origin: Point3, direction: Point3) -> Hit | None:
        """Closest intersection along a single unit-direction ray, or None."""
        o = as_point3(origin)
        d = as_point3(direction)
        if abs(np.linalg.norm(d) - 1.0) > UNIT_TOL:
            raise InvalidInputError("ray direction must be unit length")
        t, tri = self.first_hits(o[None, :], d[None, :], validate=False)
        if tri[0] < 0:
            return None
        return Hit(o + t[0] * d, float(t[0]), int(tri[0]))

    def first_hits(self, origins: np.ndarray, directions: np.ndarray,
                   validate: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Batched first hits. Returns (t, triangle index); misses are (inf, -1)."""
        o = np.asarray(origins, dtype=np.float64)
        d = np.asarray(directions, dtype=np.float64)
        if validate:
            norms = np.linalg.norm(d, axis=1)
            if norms.size and np.abs(norms - 1.0).max() > UNIT_TOL:
                raise InvalidInputError("ray directions must be unit length")
        n = len(o)
        if n == 0:
            return np.empty(0), np.empty(0, dtype=np.int64)

        # Clamp tiny components so slab arithmetic stays finite.
        tiny = 1e-30
        d_safe = np.where(np.abs(d) < tiny, np.where(d >= 0, tiny, -tiny), d)
        inv_d = 1.0 / d_safe

        t_best = np.full(n, np.inf)
        tri_best = np.full(n, _TRI_SENTINEL, dtype=np.int64)

        stack = np.zeros((n, _MAX_DEPTH + 2), dtype=np.int64)
        # Entry distance recorded at push time, so pops only re-check t_best.
        stack_near = np.zeros((n, _MAX_DEPTH + 2))
        sp = np.ones(n, dtype=np.int64)  # root pre-pushed at slot 0

        child = self.node_child
        right = self.node_right
        starts = self.node_start
        counts = self.node_count
        ls = self.leaf_size
        leaf_offsets = np.arange(ls, dtype=np.int64)

        while True:
            rays = np.flatnonzero(sp > 0)
            if rays.size == 0:
                break
            sp[rays] -= 1
            nodes = stack[rays, sp[rays]]
            entry = stack_near[rays, sp[rays]]

            ok = entry < t_best[rays]
            rays = rays[ok]
            if rays.size == 0:
                continue
            nodes = nodes[ok]

            is_leaf = child[nodes] < 0
            # Internal nodes: test both children now, push far-then-near so the
            # near child pops first and tightens t_best early.
            internal = np.flatnonzero(~is_leaf)
            if internal.size:
                r_int = rays[internal]
                n_int = nodes[internal]
                left_ids = child[n_int]
                right_ids = right[n_int]
                ln, lf = self._slab(o[r_int], inv_d[r_int], left_ids)
                rn, rf = self._slab(o[r_int], inv_d[r_int], right_ids)
                l_ok = (ln <= lf) & (lf >= T_MIN) & (ln < t_best[r_int])
                r_ok = (rn <= rf) & (rf >= T_MIN) & (rn < t_best[r_int])
                left_near = ln <= rn
                first = np.where(left_near, left_ids, right_ids)
                second = np.where(left_near, right_ids, left_ids)
                first_ok = np.where(left_near, l_ok, r_ok)
                second_ok = np.where(left_near, r_ok, l_ok)
                first_near = np.where(left_near, ln, rn)
                second_near = np.where(left_near, rn, ln)
                # Far child first onto the stack.
                push = np.flatnonzero(second_ok)
                if push.size:
                    rr = r_int[push]
                    stack[rr, sp[rr]] = second[push]
                    stack_near[rr, sp[rr]] = second_near[push]
                    sp[rr] += 1
                push = np.flatnonzero(first_ok)
                if push.size:
                    rr = r_int[push]
                    stack[rr, sp[rr]] = first[push]
                    stack_near[rr, sp[rr]] = first_near[push]
                    sp[rr] += 1

            leaf = np.flatnonzero(is_leaf)
            if leaf.size:
                r_leaf = rays[leaf]
                n_leaf = nodes[leaf]
                slots = starts[n_leaf][:, None] + leaf_offsets[None, :]
                valid = leaf_offsets[None, :] < counts[n_leaf][:, None]
                slots = np.where(valid, slots, 0)
                t_hit = self._tri_hits(o[r_leaf], d[r_leaf], inv_d[r_leaf], slots, valid)
                tri_ids = np.where(np.isfinite(t_hit), self.tri_index[slots], _TRI_SENTINEL)
                # Per-ray best within the leaf: min t, lowest triangle id on ties.
                t_min = t_hit.min(axis=1)
                at_min = t_hit <= t_min[:, None]
                id_min = np.where(at_min, tri_ids, _TRI_SENTINEL).min(axis=1)
                better = (t_min < t_best[r_leaf]) | (
                    (t_min == t_best[r_leaf]) & (id_min < tri_best[r_leaf])
                )
                upd = np.flatnonzero(better)
                if upd.size:
                    t_best[r_leaf[upd]] = t_min[upd]
                    tri_best[r_leaf[upd]] = id_min[upd]

        tri_out = np.where(tri_best == _TRI_SENTINEL, -1, tri_best)
        return t_best, tri_out

    def _slab(self, o, inv_d, nodes):
        t0 = (self.node_min[nodes] - o) * inv_d
        t1 = (self.node_max[nodes] - o) * inv_d
        lo = np.minimum(t0, t1)
        hi = np.maximum(t0, t1)
        # Unrolled axis reductions: much cheaper than ufunc.reduce on (N, 3).
        near = np.maximum(np.maximum(lo[:, 0], lo[:, 1]), np.maximum(lo[:, 2], 0.0))
        far = np.minimum(np.minimum(hi[:, 0], hi[:, 1]), hi[:, 2])
        return near, far

    def _tri_hits(self, o, d, inv_d, slots, valid):
        """Möller-Trumbore over a (rays, leaf_size) block; misses are inf."""
        v0 = self.v0[slots]
        e1 = self.e1[slots]
        e2 = self.e2[slots]
        dd = d[:, None, :]
        pv = np.cross(dd, e2)
        det = np.einsum("rki,rki->rk", e1, pv)
        ok = valid & (np.abs(det) > DET_EPS)
        inv_det = np.where(ok, 1.0 / np.where(det == 0.0, 1.0, det), 0.0)
        tv = o[:, None, :] - v0
        u = np.einsum("rki,rki->rk", tv, pv) * inv_det
        qv = np.cross(tv, e1)
        v = np.einsum("rki,rki->rk", dd, qv) * inv_det
        t = np.einsum("rki,rki->rk", e2, qv) * inv_det
        ok &= (u >= -BARY_EPS) & (v >= -BARY_EPS) & (u + v <= 1.0 + BARY_EPS) & (t >= T_MIN)
        return np.where(ok, t, np.inf)

    # ------------------------------------------------------------- diagnostics

    def node_boxes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(min, max, left child, right child) arrays, for invariant checks."""
        return self.node_min, self.node_max, self.node_child, self.node_right
