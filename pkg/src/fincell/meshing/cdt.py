"""Constrained Delaunay triangulation on top of scipy's point-set Delaunay.

scipy.spatial.Delaunay triangulates the convex hull of a point set; this module
adds the two missing ingredients for FEM meshing: recovery of required
(constrained) edges by diagonal flips, and carving of hole polygons.
"""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.spatial import Delaunay

from ..errors import MeshError
from ..geometry import points_in_polygon

__all__ = ["constrained_triangulation"]


def _orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _proper_cross(p, q, u, v) -> bool:
    """True if open segments pq and uv intersect at an interior point."""
    d1 = _orient(p, q, u)
    d2 = _orient(p, q, v)
    d3 = _orient(u, v, p)
    d4 = _orient(u, v, q)
    return (d1 * d2 < 0.0) and (d3 * d4 < 0.0)


class _EditableTriangulation:
    """Triangle soup with edge adjacency supporting diagonal flips."""

    def __init__(self, points: np.ndarray, simplices: np.ndarray):
        self.pts = points
        self.tris: list = [tuple(t) for t in simplices]
        self.alive = [True] * len(self.tris)
        self.edge2tris: dict = {}
        for i, t in enumerate(self.tris):
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                self.edge2tris.setdefault(self._key(e), []).append(i)

    @staticmethod
    def _key(e):
        return (e[0], e[1]) if e[0] < e[1] else (e[1], e[0])

    def has_edge(self, a, b) -> bool:
        return self._key((a, b)) in self.edge2tris

    def _add_tri(self, a, b, c):
        if _orient(self.pts[a], self.pts[b], self.pts[c]) < 0:
            b, c = c, b
        i = len(self.tris)
        self.tris.append((a, b, c))
        self.alive.append(True)
        for e in ((a, b), (b, c), (c, a)):
            self.edge2tris.setdefault(self._key(e), []).append(i)
        return i

    def _remove_tri(self, i):
        a, b, c = self.tris[i]
        self.alive[i] = False
        for e in ((a, b), (b, c), (c, a)):
            k = self._key(e)
            lst = self.edge2tris[k]
            lst.remove(i)
            if not lst:
                del self.edge2tris[k]

    def edge_tris(self, a, b):
        return self.edge2tris.get(self._key((a, b)), [])

    def flip(self, a, b):
        """Replace diagonal (a, b) of a convex quad by the other diagonal.

        Returns the new diagonal (w1, w2), or None if the quad is not strictly
        convex (flip would invert a triangle).
        """
        tids = self.edge_tris(a, b)
        if len(tids) != 2:
            return None
        t1, t2 = (self.tris[i] for i in tids)
        w1 = next(v for v in t1 if v not in (a, b))
        w2 = next(v for v in t2 if v not in (a, b))
        # quad a-w1-b-w2 strictly convex <=> a, b on opposite sides of w1w2
        # and w1, w2 on opposite sides of ab
        if _orient(self.pts[w1], self.pts[w2], self.pts[a]) * _orient(
            self.pts[w1], self.pts[w2], self.pts[b]
        ) >= 0:
            return None
        for i in sorted(tids, reverse=True):
            self._remove_tri(i)
        self._add_tri(a, w1, w2)
        self._add_tri(b, w1, w2)
        return (w1, w2)

    def triangle_array(self) -> np.ndarray:
        return np.array([t for t, ok in zip(self.tris, self.alive) if ok], dtype=np.int64)


def _recover_segment(T: _EditableTriangulation, s: int, t: int, max_flips: int) -> None:
    p, q = T.pts[s], T.pts[t]
    crossing = deque(
        e for e in list(T.edge2tris) if _proper_cross(p, q, T.pts[e[0]], T.pts[e[1]])
    )
    for a, b in crossing:
        if s in (a, b) or t in (a, b):
            raise MeshError(
                f"constrained segment ({s},{t}) passes through vertex of edge ({a},{b})"
            )
    flips = 0
    stall = 0
    while crossing:
        a, b = crossing.popleft()
        if not T.edge_tris(a, b):
            continue
        if not _proper_cross(p, q, T.pts[a], T.pts[b]):
            continue
        new = T.flip(a, b)
        if new is None:
            crossing.append((a, b))
            stall += 1
            if stall > 4 * (len(crossing) + 1):
                raise MeshError(f"edge recovery stalled on segment ({s},{t})")
            continue
        stall = 0
        flips += 1
        if flips > max_flips:
            raise MeshError(f"edge recovery exceeded flip budget on segment ({s},{t})")
        w1, w2 = new
        if (w1, w2) != (s, t) and (w2, w1) != (s, t):
            if _proper_cross(p, q, T.pts[w1], T.pts[w2]):
                crossing.append((w1, w2))
    if not T.has_edge(s, t):
        raise MeshError(f"failed to recover constrained segment ({s},{t})")


def constrained_triangulation(
    points: np.ndarray, segments: np.ndarray, holes: list
) -> np.ndarray:
    """Triangulate `points`, enforce `segments` as edges, carve `holes`.

    Parameters
    ----------
    points : (n, 2) float
        All mesh vertices (boundary and interior). Must be unique.
    segments : (ns, 2) int
        Required edges (outer boundary chains and hole rings).
    holes : list of (m, 2) float polygons
        Triangles whose centroid falls inside any polygon are removed.

    Returns
    -------
    (nt, 3) int triangle array, counter-clockwise.
    """
    uniq = np.unique(points, axis=0)
    if len(uniq) != len(points):
        raise MeshError(f"duplicate mesh points ({len(points) - len(uniq)} repeats)")
    dt = Delaunay(points)
    simps = dt.simplices.astype(np.int64)

    # orient CCW
    p0 = points[simps[:, 0]]
    d1 = points[simps[:, 1]] - p0
    d2 = points[simps[:, 2]] - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    flip = det < 0
    simps[flip, 1], simps[flip, 2] = simps[flip, 2], simps[flip, 1].copy()
    if np.any(det == 0):
        raise MeshError("Delaunay produced a degenerate (zero-area) triangle")

    # recover missing constrained edges
    edge_set = set()
    for tri in simps:
        a, b, c = int(tri[0]), int(tri[1]), int(tri[2])
        edge_set.add((a, b) if a < b else (b, a))
        edge_set.add((b, c) if b < c else (c, b))
        edge_set.add((a, c) if a < c else (c, a))
    missing = [
        (int(s), int(t))
        for s, t in segments
        if ((s, t) if s < t else (t, s)) not in edge_set
    ]
    if missing:
        T = _EditableTriangulation(points, simps)
        for s, t in missing:
            if not T.has_edge(s, t):
                _recover_segment(T, s, t, max_flips=10 * len(simps))
        simps = T.triangle_array()

    # carve holes by centroid test
    if holes:
        cent = points[simps].mean(axis=1)
        keep = np.ones(len(simps), dtype=bool)
        for poly in holes:
            lo = poly.min(axis=0)
            hi = poly.max(axis=0)
            cand = np.where(
                keep
                & (cent[:, 0] >= lo[0])
                & (cent[:, 0] <= hi[0])
                & (cent[:, 1] >= lo[1])
                & (cent[:, 1] <= hi[1])
            )[0]
            if len(cand):
                inside = points_in_polygon(cent[cand], poly)
                keep[cand[inside]] = False
        simps = simps[keep]

    if len(simps) == 0:
        raise MeshError("triangulation is empty after carving")
    return simps
