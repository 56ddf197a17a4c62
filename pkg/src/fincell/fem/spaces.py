"""Scalar function spaces on triangle meshes and periodic/Dirichlet dof maps.

A space owns the full nodal dof layout; a FieldMap reduces it to the unknown
vector by aliasing periodic slave dofs to their masters and eliminating
Dirichlet dofs. Reduction is algebraic: u_full = C @ u_red + d,
R_red = C.T @ R_full, A_red = C.T @ A_full @ C, with C and d independent of
node coordinates.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import AssemblyError, MeshError
from ..meshing.trimesh import TriMesh

__all__ = ["P1Space", "P2Space", "FieldMap", "SystemMap"]


def _directional_pairs(mesh: TriMesh):
    """Split stored periodic pairs into x-translation and y-translation maps."""
    map_x: dict[int, int] = {}
    map_y: dict[int, int] = {}
    if len(mesh.periodic_pairs) == 0:
        return map_x, map_y
    w, h = mesh.extent
    s = mesh.nodes[mesh.periodic_pairs[:, 0]]
    m = mesh.nodes[mesh.periodic_pairs[:, 1]]
    dx = np.abs(np.abs(s[:, 0] - m[:, 0]) - w) < 1e-9 * w
    for (slave, master), isx in zip(mesh.periodic_pairs, dx):
        if isx:
            map_x[int(slave)] = int(master)
        else:
            map_y[int(slave)] = int(master)
    return map_x, map_y


def _canonical_alias(n: int, pairs: np.ndarray) -> np.ndarray:
    """Resolve slave->master chains to a canonical representative array."""
    alias = np.arange(n, dtype=np.int64)
    for slave, master in pairs:
        alias[slave] = master
    for _ in range(4):  # chains are at most 2 hops (corner nodes)
        nxt = alias[alias]
        if np.array_equal(nxt, alias):
            break
        alias = nxt
    else:
        raise MeshError("periodic alias chains did not terminate")
    return alias


class P1Space:
    """Linear scalar space: one dof per vertex."""

    order = 1

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.cell_dofs = mesh.triangles
        self.n_dofs = mesh.n_nodes
        self.alias = _canonical_alias(self.n_dofs, mesh.periodic_pairs)

    def dof_coords(self) -> np.ndarray:
        return self.mesh.nodes

    def boundary_dofs(self, tags=None) -> np.ndarray:
        return self.mesh.boundary_nodes(tags)


class P2Space:
    """Quadratic scalar space: vertex dofs then edge-midpoint dofs."""

    order = 2

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        t = mesh.triangles
        raw = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
        raw_sorted = np.sort(raw, axis=1)
        self.edges, inv = np.unique(raw_sorted, axis=0, return_inverse=True)
        nt = len(t)
        nv = mesh.n_nodes
        self.n_vertices = nv
        self.n_edges = len(self.edges)
        self.n_dofs = nv + self.n_edges
        self.cell_dofs = np.column_stack(
            [t, nv + inv[:nt], nv + inv[nt : 2 * nt], nv + inv[2 * nt :]]
        )
        self._edge_lookup = {
            (int(a), int(b)): nv + i for i, (a, b) in enumerate(self.edges)
        }
        self.alias = self._build_alias()

    def edge_dof(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        try:
            return self._edge_lookup[key]
        except KeyError:
            raise AssemblyError(f"no edge dof for vertex pair {key}") from None

    def dof_coords(self) -> np.ndarray:
        mids = 0.5 * (self.mesh.nodes[self.edges[:, 0]] + self.mesh.nodes[self.edges[:, 1]])
        return np.vstack([self.mesh.nodes, mids])

    def _build_alias(self) -> np.ndarray:
        mesh = self.mesh
        nv = self.n_vertices
        alias = np.arange(self.n_dofs, dtype=np.int64)
        alias[:nv] = _canonical_alias(nv, mesh.periodic_pairs)
        map_x, map_y = _directional_pairs(mesh)
        if map_x or map_y:
            for i, (a, b) in enumerate(self.edges):
                a2, b2 = int(a), int(b)
                changed = True
                while changed:
                    changed = False
                    for m in (map_x, map_y):
                        if a2 in m and b2 in m:
                            a2, b2 = m[a2], m[b2]
                            changed = True
                if (a2, b2) != (int(a), int(b)):
                    alias[nv + i] = self.edge_dof(a2, b2)
        return alias

    def boundary_dofs(self, tags=None) -> np.ndarray:
        """Vertex and midpoint dofs lying on boundary edges with the given tags."""
        mesh = self.mesh
        if tags is None:
            sel = np.ones(len(mesh.boundary_edges), dtype=bool)
        else:
            sel = np.isin(mesh.boundary_tag, list(np.atleast_1d(tags)))
        verts = np.unique(mesh.boundary_edges[sel])
        mids = np.array(
            [self.edge_dof(int(a), int(b)) for a, b in mesh.boundary_edges[sel]],
            dtype=np.int64,
        )
        return np.unique(np.concatenate([verts, mids])) if len(mids) else verts


class FieldMap:
    """Reduction map for one (possibly vector-valued) field on a space.

    Full layout interleaves components: full dof = n_comp * node + comp.
    """

    def __init__(self, space, n_comp: int = 1, dirichlet: dict | None = None):
        self.space = space
        self.n_comp = n_comp
        self.n_full = n_comp * space.n_dofs
        alias = np.repeat(space.alias * n_comp, n_comp) + np.tile(
            np.arange(n_comp), space.n_dofs
        )
        self.alias = alias
        d = np.zeros(self.n_full)
        is_dirichlet = np.zeros(self.n_full, dtype=bool)
        if dirichlet:
            for dof, val in dirichlet.items():
                mdof = alias[dof]
                is_dirichlet[mdof] = True
                d[mdof] = val
        # broadcast constrained values through aliases
        is_dirichlet = is_dirichlet[alias]
        d = d[alias]
        self.dirichlet_mask = is_dirichlet
        self.dirichlet_values = d
        masters = np.where((alias == np.arange(self.n_full)) & ~is_dirichlet)[0]
        self.n_reduced = len(masters)
        red_of_master = -np.ones(self.n_full, dtype=np.int64)
        red_of_master[masters] = np.arange(self.n_reduced)
        col = red_of_master[alias]
        rows = np.where(col >= 0)[0]
        self.C = sp.csr_matrix(
            (np.ones(len(rows)), (rows, col[rows])), shape=(self.n_full, self.n_reduced)
        )
        self.masters = masters

    def expand(self, u_red: np.ndarray) -> np.ndarray:
        return self.C @ u_red + self.dirichlet_values

    def reduce(self, r_full: np.ndarray) -> np.ndarray:
        return self.C.T @ r_full

    def restrict_values(self, u_full: np.ndarray) -> np.ndarray:
        """Extract the reduced vector from a full vector (inverse of expand)."""
        return u_full[self.masters]


class SystemMap:
    """Concatenation of field maps plus trailing scalar unknowns."""

    def __init__(self, fields: list, n_scalars: int = 0):
        self.fields = fields
        self.n_scalars = n_scalars
        self.full_offsets = np.concatenate([[0], np.cumsum([f.n_full for f in fields])])
        self.red_offsets = np.concatenate([[0], np.cumsum([f.n_reduced for f in fields])])
        self.n_full = int(self.full_offsets[-1]) + n_scalars
        self.n_reduced = int(self.red_offsets[-1]) + n_scalars
        blocks = [f.C for f in fields]
        if n_scalars:
            blocks.append(sp.identity(n_scalars, format="csr"))
        self.C = sp.block_diag(blocks, format="csr")
        self.d = np.concatenate(
            [f.dirichlet_values for f in fields] + ([np.zeros(n_scalars)] if n_scalars else [])
        )

    def expand(self, u_red: np.ndarray) -> list:
        """Split a reduced vector into full per-field arrays plus scalars."""
        full = self.C @ u_red + self.d
        out = []
        for i, f in enumerate(self.fields):
            seg = full[self.full_offsets[i] : self.full_offsets[i + 1]]
            if f.n_comp > 1:
                seg = seg.reshape(-1, f.n_comp)
            out.append(seg)
        out.append(full[self.full_offsets[-1] :])
        return out

    def reduce_residual(self, parts: list, scalars: np.ndarray) -> np.ndarray:
        flat = [np.asarray(p).reshape(-1) for p in parts]
        return self.C.T @ np.concatenate(flat + [np.asarray(scalars).reshape(-1)])

    def reduce_matrix(self, A_full: sp.spmatrix) -> sp.csr_matrix:
        return (self.C.T @ A_full @ self.C).tocsr()

    def pack(self, parts: list, scalars: np.ndarray) -> np.ndarray:
        """Reduced vector whose expansion reproduces the given full fields."""
        out = np.empty(self.n_reduced)
        for i, f in enumerate(self.fields):
            out[self.red_offsets[i] : self.red_offsets[i + 1]] = f.restrict_values(
                np.asarray(parts[i]).reshape(-1)
            )
        out[self.red_offsets[-1] :] = scalars
        return out
