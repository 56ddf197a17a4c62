"""Immutable triangle mesh with boundary tags and periodic node pairing.

Nodes are triangulation vertices only; quadratic elements derive their edge
dofs from vertex pairs (straight-edged elements). Meshes are treated as
immutable: deformation and remeshing return new objects.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import DeformationError, MeshError

__all__ = ["BoundaryTag", "TriMesh", "triangle_quality"]


class BoundaryTag:
    FIN = 0
    LEFT = 1
    RIGHT = 2
    BOTTOM = 3
    TOP = 4

    NAMES = {0: "FIN", 1: "LEFT", 2: "RIGHT", 3: "BOTTOM", 4: "TOP"}


def _tri_dets(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = nodes[triangles[:, 0]]
    d1 = nodes[triangles[:, 1]] - p0
    d2 = nodes[triangles[:, 2]] - p0
    return d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]


def triangle_quality(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Radius-ratio quality 2*r_in/R_circ per triangle (1 = equilateral)."""
    p = nodes[triangles]
    e0 = np.hypot(*(p[:, 2] - p[:, 1]).T)
    e1 = np.hypot(*(p[:, 0] - p[:, 2]).T)
    e2 = np.hypot(*(p[:, 1] - p[:, 0]).T)
    area = 0.5 * np.abs(_tri_dets(nodes, triangles))
    s = e0 + e1 + e2
    prod = e0 * e1 * e2
    with np.errstate(divide="ignore", invalid="ignore"):
        q = 16.0 * area**2 / np.maximum(s * prod, 1e-300)
    return q


@dataclass(frozen=True)
class TriMesh:
    """Conforming triangle mesh of a rectangular domain with polygonal holes.

    Attributes
    ----------
    nodes : (nv, 2) float
        Vertex coordinates in meters.
    triangles : (nt, 3) int
        Counter-clockwise vertex triples.
    boundary_edges : (nb, 2) int
        Vertex pairs (a, b) traversed in parent-triangle CCW order, so the
        outward normal of the fluid is rot(-90deg) of (b - a).
    boundary_parent : (nb,) int
        Parent triangle of each boundary edge.
    boundary_tag : (nb,) int
        BoundaryTag value per edge.
    boundary_fin : (nb,) int
        Fin index per edge, -1 on the outer rectangle.
    periodic_pairs : (np, 2) int
        (slave, master) vertex pairs; coordinates match up to translation by
        the domain period exactly (layout-copied construction).
    domain : (4,) float
        (x0, y0, x1, y1) of the outer rectangle.
    periodic_x, periodic_y : bool
        Which direction pairs are identified.
    h_target : float
        Interior target edge length the mesh was generated for.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_parent: np.ndarray
    boundary_tag: np.ndarray
    boundary_fin: np.ndarray
    periodic_pairs: np.ndarray
    domain: np.ndarray
    periodic_x: bool
    periodic_y: bool
    h_target: float

    # --- basic measures -----------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def extent(self) -> np.ndarray:
        return np.array([self.domain[2] - self.domain[0], self.domain[3] - self.domain[1]])

    def tri_dets(self) -> np.ndarray:
        return _tri_dets(self.nodes, self.triangles)

    def fluid_area(self) -> float:
        return 0.5 * float(np.sum(self.tri_dets()))

    def quality(self) -> np.ndarray:
        return triangle_quality(self.nodes, self.triangles)

    def min_quality(self) -> float:
        return float(self.quality().min())

    # --- node sets ------------------------------------------------------------

    def boundary_nodes(self, tags=None) -> np.ndarray:
        """Sorted unique vertex ids on boundary edges with the given tags."""
        if tags is None:
            sel = slice(None)
        else:
            sel = np.isin(self.boundary_tag, list(np.atleast_1d(tags)))
        return np.unique(self.boundary_edges[sel])

    def outer_nodes(self) -> np.ndarray:
        return self.boundary_nodes(
            [BoundaryTag.LEFT, BoundaryTag.RIGHT, BoundaryTag.BOTTOM, BoundaryTag.TOP]
        )

    def fin_nodes(self) -> np.ndarray:
        return self.boundary_nodes([BoundaryTag.FIN])

    def corner_node(self) -> int:
        """Vertex at the lower-left domain corner (the periodic master corner)."""
        d = self.nodes - self.domain[:2]
        i = int(np.argmin(d[:, 0] ** 2 + d[:, 1] ** 2))
        if not np.allclose(self.nodes[i], self.domain[:2], atol=1e-9 * max(self.extent)):
            raise MeshError("no vertex found at the lower-left domain corner")
        return i

    def fin_loops(self) -> list[np.ndarray]:
        """Ordered vertex loops of each fin hole, one CCW polyline per fin.

        Loop k corresponds to boundary_fin == k; vertices are returned in the
        stored edge orientation chained head-to-tail.
        """
        loops = []
        nfin = int(self.boundary_fin.max()) + 1 if len(self.boundary_fin) else 0
        for k in range(nfin):
            sel = np.where(self.boundary_fin == k)[0]
            if len(sel) == 0:
                continue
            nxt = {int(a): int(b) for a, b in self.boundary_edges[sel]}
            start = int(self.boundary_edges[sel[0], 0])
            loop = [start]
            cur = nxt[start]
            while cur != start:
                loop.append(cur)
                if cur not in nxt or len(loop) > len(sel) + 1:
                    raise MeshError(f"fin {k} boundary is not a single closed loop")
                cur = nxt[cur]
            poly = self.nodes[np.array(loop)]
            # stored orientation walks the hole with fluid on the left (CW
            # around the hole); report the conventional CCW polyline
            x, y = poly[:, 0], poly[:, 1]
            signed = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
            loops.append(poly[::-1].copy() if signed < 0 else poly)
        return loops

    # --- deformation ------------------------------------------------------------

    def deform(self, displacement: np.ndarray, min_quality: float = 0.0) -> "TriMesh":
        """Return a new mesh with nodes moved by `displacement` (nv, 2).

        Raises DeformationError if any element inverts (non-positive Jacobian)
        or falls below `min_quality`.
        """
        S = np.asarray(displacement, dtype=float)
        if S.shape != self.nodes.shape:
            raise DeformationError(
                f"displacement shape {S.shape} does not match nodes {self.nodes.shape}"
            )
        new_nodes = self.nodes + S
        dets = _tri_dets(new_nodes, self.triangles)
        worst = int(np.argmin(dets))
        if dets[worst] <= 0.0:
            raise DeformationError(
                f"deformation inverts element {worst} (det = {dets[worst]:.3e})",
                element=worst,
                min_det=float(dets[worst]),
            )
        if min_quality > 0.0:
            q = triangle_quality(new_nodes, self.triangles)
            worst = int(np.argmin(q))
            if q[worst] < min_quality:
                raise DeformationError(
                    f"deformation degrades element {worst} below quality "
                    f"{min_quality} (q = {q[worst]:.3e})",
                    element=worst,
                    min_det=float(dets[worst]),
                )
        return replace(self, nodes=new_nodes)

    # --- validation ------------------------------------------------------------

    def validate(self) -> None:
        """Check structural invariants; raise MeshError on violation."""
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshError("nodes must be (nv, 2)")
        if np.any(self.triangles < 0) or np.any(self.triangles >= self.n_nodes):
            raise MeshError("triangle vertex index out of range")
        dets = self.tri_dets()
        if np.any(dets <= 0):
            bad = int(np.argmin(dets))
            raise MeshError(f"non-CCW or degenerate triangle {bad} (det = {dets[bad]:.3e})")
        # edge incidence: boundary edges on exactly one triangle, others two
        edges = np.sort(
            np.concatenate(
                [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]
            ),
            axis=1,
        )
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-manifold edge (shared by more than two triangles)")
        boundary_set = {tuple(e) for e in uniq[counts == 1]}
        stored = {tuple(sorted(e)) for e in self.boundary_edges}
        if boundary_set != stored:
            raise MeshError(
                f"stored boundary edges disagree with triangulation "
                f"({len(stored)} stored vs {len(boundary_set)} actual)"
            )
        # periodic pairs: coordinates equal up to one domain period
        if len(self.periodic_pairs):
            slaves = self.nodes[self.periodic_pairs[:, 0]]
            masters = self.nodes[self.periodic_pairs[:, 1]]
            d = np.abs(slaves - masters)
            w, h = self.extent
            okx = (d[:, 0] < 1e-12 * w) | (np.abs(d[:, 0] - w) < 1e-12 * w)
            oky = (d[:, 1] < 1e-12 * h) | (np.abs(d[:, 1] - h) < 1e-12 * h)
            if not np.all(okx & oky):
                raise MeshError("periodic pair coordinates do not match up to translation")
        self.fin_loops()  # raises if loops are broken


def fin_edge_lengths(mesh: TriMesh) -> np.ndarray:
    sel = mesh.boundary_tag == BoundaryTag.FIN
    e = mesh.boundary_edges[sel]
    d = mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]]
    return np.hypot(d[:, 0], d[:, 1])
