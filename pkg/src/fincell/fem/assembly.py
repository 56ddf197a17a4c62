"""Batched element assembly helpers shared by the flow/energy/array models.

Element kernels are written as plain numpy expressions of gathered element
arrays (coordinates, nodal values) and are complex-analytic: every derivative
used by Newton, the adjoint, and the shape gradient is evaluated by the
complex-step rule Im(f(x + ih))/h, which is the hand linearization of the
implemented discrete forms to machine precision (no subtractive cancellation,
any h in a wide window gives the same floating-point result).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .reference import EDGE_QP, EDGE_QW, EDGE_VERTICES, TRI_QP, TRI_QW, p2_basis, p2_grads

__all__ = [
    "CS_H",
    "cs_perturb_state",
    "cs_perturb_coords",
    "scalar_cs_grad",
    "tri_geometry",
    "geom_tables",
    "eval_values",
    "eval_grads",
    "BlockCOO",
    "EdgeBatch",
    "edge_batches",
]

CS_H = 1e-60  # complex-step size; derivatives are linear in h, value is uncritical

_P2G_QP = p2_grads(TRI_QP)  # reference P2 gradients at the volume rule


def cs_perturb_state(arr: np.ndarray, slot: tuple, h: float = CS_H) -> np.ndarray:
    """Complex copy of a gathered element array with arr[:, slot] += i*h."""
    out = arr.astype(complex)
    out[(slice(None),) + slot] += 1j * h
    return out


def cs_perturb_coords(coords: np.ndarray, vertex: int, comp: int, h: float = CS_H) -> np.ndarray:
    out = coords.astype(complex)
    out[:, vertex, comp] += 1j * h
    return out


def scalar_cs_grad(fn, args) -> list:
    """Partial derivatives of a scalar complex-analytic function of scalars."""
    out = []
    for i in range(len(args)):
        pert = list(args)
        pert[i] = pert[i] + 1j * CS_H
        out.append(float(np.imag(fn(*pert)) / CS_H))
    return out


def tri_geometry(coords: np.ndarray):
    """Affine map data per element: (detJ, invJT), complex-safe.

    coords: (nt, 3, 2). detJ is twice the signed area; invJT[n] maps reference
    gradients to physical ones: grad_x = invJT @ grad_ref.
    """
    a = coords[:, 1, 0] - coords[:, 0, 0]
    b = coords[:, 2, 0] - coords[:, 0, 0]
    c = coords[:, 1, 1] - coords[:, 0, 1]
    d = coords[:, 2, 1] - coords[:, 0, 1]
    det = a * d - b * c
    inv_det = 1.0 / det
    invJT = np.empty(coords.shape[:1] + (2, 2), dtype=coords.dtype)
    # J = [[a, b], [c, d]], invJ = [[d, -b], [-c, a]] / det, invJT = transpose
    invJT[:, 0, 0] = d * inv_det
    invJT[:, 0, 1] = -c * inv_det
    invJT[:, 1, 0] = -b * inv_det
    invJT[:, 1, 1] = a * inv_det
    return det, invJT


def geom_tables(coords: np.ndarray):
    """Quadrature weights (nt, nq) and physical P2 gradients (nt, 6, nq, 2)."""
    det, invJT = tri_geometry(coords)
    w = TRI_QW[None, :] * det[:, None]
    dN2 = np.einsum("nde,lqe->nlqd", invJT, _P2G_QP)
    return w, dN2


def eval_values(basis: np.ndarray, nodal: np.ndarray) -> np.ndarray:
    """Field values at quadrature points: (nt, nq[, ncomp]) from (nt, nloc[, ncomp])."""
    if nodal.ndim == 2:
        return np.einsum("lq,nl->nq", basis, nodal)
    return np.einsum("lq,nlc->nqc", basis, nodal)


def eval_grads(invJT: np.ndarray, grads_ref: np.ndarray, nodal: np.ndarray) -> np.ndarray:
    """Physical gradients at quadrature points.

    Returns (nt, nq, 2) for scalars, (nt, nq, ncomp, 2) for vectors, where the
    last axis is the derivative direction.
    """
    if nodal.ndim == 2:
        return np.einsum("nde,lqe,nl->nqd", invJT, grads_ref, nodal)
    return np.einsum("nde,lqe,nlc->nqcd", invJT, grads_ref, nodal)


class BlockCOO:
    """Triplet accumulator for sparse matrices assembled block by block."""

    def __init__(self, shape: tuple):
        self.shape = shape
        self._rows: list = []
        self._cols: list = []
        self._vals: list = []

    def add(self, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> None:
        rows, cols, vals = np.broadcast_arrays(rows, cols, vals)
        self._rows.append(rows.reshape(-1))
        self._cols.append(cols.reshape(-1))
        self._vals.append(vals.reshape(-1))

    def tocsr(self) -> sp.csr_matrix:
        if not self._rows:
            return sp.csr_matrix(self.shape)
        m = sp.coo_matrix(
            (
                np.concatenate(self._vals),
                (np.concatenate(self._rows), np.concatenate(self._cols)),
            ),
            shape=self.shape,
        )
        return m.tocsr()


class EdgeBatch:
    """Boundary edges sharing the same parent-local edge index, batched.

    Provides edge quadrature data in the parent element's reference frame so
    volume-space fields can be evaluated and differentiated on the boundary.
    """

    def __init__(self, local_edge: int, edge_ids: np.ndarray, parents: np.ndarray):
        self.local_edge = local_edge
        self.edge_ids = edge_ids  # indices into mesh.boundary_edges
        self.parents = parents  # parent triangle ids
        t = EDGE_QP
        from .reference import edge_ref_points

        ref_pts = edge_ref_points(local_edge, t)
        self.basis_p2 = p2_basis(ref_pts)  # (6, nq)
        self.grads_p2 = p2_grads(ref_pts)  # (6, nq, 2)
        from .reference import p1_basis

        self.basis_p1 = p1_basis(ref_pts)
        self.qw = EDGE_QW
        self.va, self.vb = EDGE_VERTICES[local_edge]

    def geometry(self, coords: np.ndarray):
        """(length, n_fluid) for each edge; n_fluid is the unit normal into the fluid.

        coords: gathered parent coordinates (ne, 3, 2), possibly complex. The
        (a -> b) traversal is parent-CCW, so the outward normal of the fluid is
        rot(-90) of the tangent and the into-fluid normal its negation.
        """
        d = coords[:, self.vb] - coords[:, self.va]
        length = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
        n_fluid = np.stack([-d[:, 1], d[:, 0]], axis=1) / length[:, None]
        return length, n_fluid

    def qp_coords(self, coords: np.ndarray) -> np.ndarray:
        """Physical quadrature-point coordinates, (ne, nq, 2)."""
        a = coords[:, self.va]
        b = coords[:, self.vb]
        t = EDGE_QP
        return a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]


def edge_batches(mesh, selector: np.ndarray) -> list:
    """Group selected boundary edges of a mesh by parent-local edge index."""
    out = []
    ids = np.where(selector)[0]
    if len(ids) == 0:
        return out
    edges = mesh.boundary_edges[ids]
    parents = mesh.boundary_parent[ids]
    tris = mesh.triangles[parents]
    local = np.full(len(ids), -1)
    for ell in range(3):
        va, vb = EDGE_VERTICES[ell]
        hit = (tris[:, va] == edges[:, 0]) & (tris[:, vb] == edges[:, 1])
        local[hit] = ell
    if np.any(local < 0):
        raise ValueError("boundary edge orientation does not match its parent triangle")
    for ell in range(3):
        sel = local == ell
        if np.any(sel):
            out.append(EdgeBatch(ell, ids[sel], parents[sel]))
    return out
