"""Ball-pivoting surface reconstruction.

Rolls a ball of fixed radius over the point set: a seed triangle is a point
triple the ball can rest on without containing any other point, and the front
then expands by pivoting the ball around each boundary edge until it touches
the next point. Vertices are used exactly as given (positions preserved
bit-for-bit); radii are applied in ascending passes, re-activating boundary
edges for each new radius.

Pivot outcomes depend only on the point set, never on mesh state, so fronts
are processed in batches: candidate search and pivot angles are vectorized
over many edges at once, and results are committed in FIFO order with the
usual manifold checks. This matches the sequential algorithm exactly while
keeping the per-edge cost at numpy speed.
"""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMeshError, InvalidInputError

_WAVE = 8192
_PIVOT_CANDIDATES = 32
_SEED_CANDIDATES = 24
_THETA_EPS = 1e-7
_BALL_SHRINK = 1.0 - 1e-7  # points exactly on the ball sphere do not block it
_NORMAL_AGREEMENT = -0.5   # lenient: reject only clearly folded-back triangles


def estimate_normals(points: np.ndarray, k: int = 16,
                     interior_hint=None) -> np.ndarray:
    """Unit normals via PCA over k nearest neighbors.

    Near-horizontal surfaces are oriented upward (+z); near-vertical ones
    (walls) toward `interior_hint` (default: the cloud centroid), matching a
    road scene where walls face the street.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 3:
        raise InvalidInputError("need at least 3 points to estimate normals")
    tree = cKDTree(pts)
    k_eff = min(k + 1, n)
    _, idx = tree.query(pts, k=k_eff, workers=-1)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]

    hint = np.asarray(interior_hint, dtype=np.float64) if interior_hint is not None \
        else pts.mean(axis=0)
    to_hint = hint - pts
    wallish = np.abs(normals[:, 2]) < 0.15
    sign = np.where(wallish,
                    np.sign(np.einsum("ij,ij->i", normals, to_hint)),
                    np.sign(normals[:, 2]))
    sign[sign == 0] = 1.0
    return normals * sign[:, None]


class _Front:
    """Mesh state shared by seeding and pivoting."""

    def __init__(self, points, normals):
        self.points = points
        self.normals = normals
        self.tree = cKDTree(points)
        self.triangles = []
        self.tri_set = set()
        self.edge_count = {}
        self.vertex_used = np.zeros(len(points), dtype=bool)
        self.vertex_edges = [None] * len(points)  # lazily created sets
        self.queue = deque()

    # ---------------------------------------------------------------- helpers

    def _key(self, a, b):
        return (a, b) if a < b else (b, a)

    def edge_open(self, a, b):
        return self.edge_count.get(self._key(a, b), 0) == 1

    def vertex_on_front(self, v):
        edges = self.vertex_edges[v]
        if not edges:
            return False
        return any(self.edge_count.get(self._key(v, u), 0) == 1 for u in edges)

    def can_attach(self, a, b, c):
        if c == a or c == b:
            return False
        if self.vertex_used[c] and not self.vertex_on_front(c):
            return False  # interior vertex
        if self.edge_count.get(self._key(a, c), 0) >= 2:
            return False
        if self.edge_count.get(self._key(c, b), 0) >= 2:
            return False
        return tuple(sorted((a, b, c))) not in self.tri_set

    def commit(self, a, c, b, center):
        """Add triangle (a, c, b) attached across front edge a->b; push new edges."""
        self.triangles.append((a, c, b))
        self.tri_set.add(tuple(sorted((a, b, c))))
        for u, v in ((a, b), (a, c), (c, b)):
            self.edge_count[self._key(u, v)] = self.edge_count.get(self._key(u, v), 0) + 1
            for w_ in (u, v):
                if self.vertex_edges[w_] is None:
                    self.vertex_edges[w_] = set()
            self.vertex_edges[u].add(v)
            self.vertex_edges[v].add(u)
        self.vertex_used[[a, b, c]] = True
        if self.edge_open(a, c):
            self.queue.append((a, c, b, center))
        if self.edge_open(c, b):
            self.queue.append((c, b, a, center))


def _circumcenters(a, u, w):
    """Circumcenters of triangles (a, a+u, a+w); w may be (..., K, 3)."""
    n = np.cross(u, w)
    n2 = np.einsum("...i,...i->...", n, n)
    u2 = np.einsum("...i,...i->...", u, u)
    w2 = np.einsum("...i,...i->...", w, w)
    degenerate = n2 <= 1e-14 * u2 * w2
    safe_n2 = np.where(degenerate, 1.0, n2)
    cc = a + (w2[..., None] * np.cross(n, u) + u2[..., None] * np.cross(w, n)) \
        / (2.0 * safe_n2[..., None])
    return cc, n, n2, degenerate


def _batch_pivot(front: _Front, edges, radius, workers=1):
    """Pivot the ball around each front edge; returns (candidate, center) per edge.

    The touched point is the candidate with the smallest rotation angle of the
    ball center around the edge axis (ties to the lowest point index), which
    guarantees the ball is empty at the touch position.
    """
    pts = front.points
    n_pts = len(pts)
    ia = np.array([e[0] for e in edges])
    ib = np.array([e[1] for e in edges])
    iopp = np.array([e[2] for e in edges])
    c0 = np.array([e[3] for e in edges])
    a = pts[ia]
    b = pts[ib]
    mid = 0.5 * (a + b)

    dist, jj = front.tree.query(mid, k=min(_PIVOT_CANDIDATES, n_pts),
                                distance_upper_bound=2.0 * radius, workers=workers)
    if jj.ndim == 1:
        jj = jj[:, None]
    valid = jj < n_pts
    jj_safe = np.where(valid, jj, 0)
    cand = pts[jj_safe]
    # The edge endpoints touch the ball at every pivot angle and never block.
    # The opposite vertex *does* stay in: if the ball touches it again first,
    # the pivot legitimately dead-ends (selecting it is handled below).
    valid &= (jj_safe != ia[:, None]) & (jj_safe != ib[:, None])

    u = b - a
    w = cand - a[:, None, :]
    cc, n, n2, degenerate = _circumcenters(a[:, None, :], u[:, None, :], w)
    valid &= ~degenerate
    r2 = np.einsum("ekj,ekj->ek", cc - a[:, None, :], cc - a[:, None, :])
    h2 = radius * radius - r2
    valid &= h2 > -1e-12 * radius * radius
    h = np.sqrt(np.clip(h2, 0.0, None))

    # Triangle (a, c, b) normal is cross(w, u) = -n; ball rests on its outward side.
    norm_n = np.sqrt(np.where(n2 > 0, n2, 1.0))
    tri_hat = -n / norm_n[..., None]
    center = cc + h[..., None] * tri_hat

    # Rotation angle of the ball center around the directed edge axis.
    e_hat = u / np.linalg.norm(u, axis=1, keepdims=True)
    p0 = c0 - mid
    p0 -= np.einsum("ej,ej->e", p0, e_hat)[:, None] * e_hat
    px = center - mid[:, None, :]
    px -= np.einsum("ekj,ej->ek", px, e_hat)[..., None] * e_hat[:, None, :]
    sin_t = np.einsum("ekj,ej->ek", np.cross(np.broadcast_to(p0[:, None, :], px.shape), px),
                      e_hat)
    cos_t = np.einsum("ekj,ej->ek", px, p0)
    theta = np.arctan2(sin_t, cos_t) % (2.0 * np.pi)
    # A co-spherical point already touching the resting ball is a legitimate
    # zero-rotation contact (grid cells: the 4th corner). Fold the 2-pi wrap
    # back to zero so such contacts win the angle ordering.
    theta = np.where(theta > 2.0 * np.pi - _THETA_EPS, 0.0, theta)

    # Selection is purely geometric: every point blocks the ball whatever its
    # orientation, and simultaneous (co-spherical) contacts all qualify. The
    # commit step walks the tied set in index order and applies quality gates.
    theta = np.where(valid, theta, np.inf)
    best_theta = theta.min(axis=1)
    found = np.isfinite(best_theta)
    tied = valid & (theta <= best_theta[:, None] + 1e-9)

    results = []
    recheck = []
    for e in range(len(edges)):
        if not found[e]:
            results.append(None)
            continue
        ks = np.flatnonzero(tied[e])
        order = np.argsort(jj_safe[e, ks], kind="stable")
        entries = []
        for k in ks[order]:
            c = int(jj_safe[e, k])
            if c == iopp[e]:
                continue  # the ball rolled back onto its own triangle
            if float(np.dot(tri_hat[e, k], front.normals[c])) <= _NORMAL_AGREEMENT:
                continue  # folded-back triangle
            entries.append((c, center[e, k]))
        if not entries:
            results.append(None)
            continue
        results.append(entries)
        recheck.append(e)

    # Empty-ball recheck at the attach position: the single-center enumeration
    # above can miss a blocking contact on the far side of a candidate. Tied
    # contacts share one resting ball, so checking the first center suffices.
    if recheck:
        centers = np.array([results[e][0][1] for e in recheck])
        inside = front.tree.query_ball_point(centers, radius * _BALL_SHRINK)
        for e, blockers in zip(recheck, inside):
            allowed = {int(ia[e]), int(ib[e])} | {c for c, _ in results[e]}
            if any(j not in allowed for j in blockers):
                results[e] = None
    return results


def _find_seed(front: _Front, radius, cursor, workers=1):
    """Scan points from `cursor` for a valid seed triangle at this radius."""
    pts = front.points
    n_pts = len(pts)
    while cursor < n_pts:
        p = cursor
        cursor += 1
        if front.vertex_used[p]:
            continue  # seeds grow only from virgin points (standard BPA)
        k = min(_SEED_CANDIDATES, n_pts)
        dist, idx = front.tree.query(pts[p], k=k, distance_upper_bound=2.0 * radius,
                                     workers=workers)
        neigh = [int(j) for d, j in zip(np.atleast_1d(dist), np.atleast_1d(idx))
                 if j < n_pts and j != p]
        neigh = [j for j in neigh
                 if not front.vertex_used[j] or front.vertex_on_front(j)]
        for qi in range(len(neigh)):
            for si in range(qi + 1, len(neigh)):
                q, s = neigh[qi], neigh[si]
                tri = tuple(sorted((p, q, s)))
                if tri in front.tri_set:
                    continue
                seed = _try_seed(front, p, q, s, radius)
                if seed is not None:
                    return seed, cursor - 1
    return None, cursor


def _try_seed(front: _Front, p, q, s, radius):
    pts = front.points
    a = pts[p]
    cc, n, n2, degenerate = _circumcenters(a, pts[q] - a, pts[s] - a)
    if degenerate:
        return None
    h2 = radius * radius - float(np.dot(cc - a, cc - a))
    if h2 <= 0:
        return None
    n_hat = n / np.sqrt(n2)
    # Orient the triangle so its normal agrees with the point normals.
    avg = front.normals[p] + front.normals[q] + front.normals[s]
    tri = (p, q, s)
    if float(np.dot(n_hat, avg)) < 0:
        n_hat = -n_hat
        tri = (p, s, q)
    center = cc + np.sqrt(h2) * n_hat
    inside = front.tree.query_ball_point(center, radius * _BALL_SHRINK)
    if any(j not in (p, q, s) for j in inside):
        return None
    if front.edge_count.get(front._key(p, q), 0) >= 2 or \
       front.edge_count.get(front._key(q, s), 0) >= 2 or \
       front.edge_count.get(front._key(p, s), 0) >= 2:
        return None
    return tri, center


def ball_pivot(points: np.ndarray, normals: np.ndarray, radii,
               workers: int = 1) -> np.ndarray:
    """Run ball pivoting over ascending radii; returns (T, 3) triangle indices."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise InvalidInputError("ball pivoting needs at least 3 points")
    radii = [float(r) for r in radii]
    if not radii or any(r <= 0 for r in radii) or any(
            r2 <= r1 for r1, r2 in zip(radii, radii[1:])):
        raise InvalidInputError("radii must be a strictly ascending positive list")

    front = _Front(pts, np.asarray(normals, dtype=np.float64))

    for radius in radii:
        _reactivate_boundary(front, radius)
        cursor = 0
        while True:
            _process_front(front, radius, workers)
            seed, cursor = _find_seed(front, radius, cursor, workers)
            if seed is None:
                break
            (p, q, s), center = seed
            front.triangles.append((p, q, s))
            front.tri_set.add(tuple(sorted((p, q, s))))
            for u, v in ((p, q), (q, s), (s, p)):
                front.edge_count[front._key(u, v)] = \
                    front.edge_count.get(front._key(u, v), 0) + 1
                for w_ in (u, v):
                    if front.vertex_edges[w_] is None:
                        front.vertex_edges[w_] = set()
                front.vertex_edges[u].add(v)
                front.vertex_edges[v].add(u)
            front.vertex_used[[p, q, s]] = True
            for u, v, o in ((p, q, s), (q, s, p), (s, p, q)):
                if front.edge_open(u, v):
                    front.queue.append((u, v, o, center))

    if not front.triangles:
        raise EmptyMeshError("no valid seed triangle at any radius")
    return np.array(front.triangles, dtype=np.int64)


def _process_front(front: _Front, radius, workers):
    while front.queue:
        wave = []
        while front.queue and len(wave) < _WAVE:
            edge = front.queue.popleft()
            if front.edge_open(edge[0], edge[1]):
                wave.append(edge)
        if not wave:
            continue
        results = _batch_pivot(front, wave, radius, workers)
        for (a, b, opp, _), entries in zip(wave, results):
            if entries is None or not front.edge_open(a, b):
                continue
            for c, center in entries:
                if front.can_attach(a, b, c):
                    front.commit(a, c, b, center)
                    break


def _reactivate_boundary(front: _Front, radius):
    """Queue every boundary edge with a ball center recomputed for this radius."""
    front.queue.clear()
    pts = front.points
    for (x, y, z) in front.triangles:
        a, b, c = pts[x], pts[y], pts[z]
        cc, n, n2, degenerate = _circumcenters(a, b - a, c - a)
        if degenerate:
            continue
        h2 = radius * radius - float(np.dot(cc - a, cc - a))
        if h2 <= 0:
            continue  # ball of this radius cannot rest on the triangle
        n_hat = n / np.sqrt(n2)  # winding normal of (x, y, z)
        center = cc + np.sqrt(h2) * n_hat
        for u, v, o in ((x, y, z), (y, z, x), (z, x, y)):
            if front.edge_open(u, v):
                front.queue.append((u, v, o, center))
