"""Deformation-smoothing operator M = I + (e / h_target^2) * K.

K is the linear-FEM stiffness (cotangent graph Laplacian) on mesh vertices:
symmetric positive semidefinite with K @ const = 0, so M is SPD and reduces to
the identity at e = 0. The weight e carries m^2; dividing by the target element
area makes the strength dimensionless (default e = (3 h)^2 -> strength 9,
smoothing over a few element layers).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .trimesh import TriMesh

__all__ = [
    "p1_stiffness",
    "smoothing_operator",
    "default_smoothing_weight",
    "harmonic_extension",
]


def p1_stiffness(mesh: TriMesh) -> sp.csr_matrix:
    """Linear-element stiffness matrix on mesh vertices (dimensionless in 2D)."""
    t = mesh.triangles
    p = mesh.nodes[t]
    # edge vectors opposite each vertex
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    area2 = np.abs(e2[:, 0] * (-e1[:, 1]) - e2[:, 1] * (-e1[:, 0]))  # = 2 * area
    grads = np.stack([e0, e1, e2], axis=1)  # rotated edge = gradient direction
    rot = np.empty_like(grads)
    rot[:, :, 0] = -grads[:, :, 1]
    rot[:, :, 1] = grads[:, :, 0]
    # local K_ij = (rot_i . rot_j) / (2 * area2)
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(t[:, i])
            cols.append(t[:, j])
            vals.append(np.einsum("nk,nk->n", rot[:, i], rot[:, j]) / (2.0 * area2))
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_nodes, mesh.n_nodes),
    )
    return K.tocsr()


def default_smoothing_weight(h_target: float) -> float:
    return (3.0 * h_target) ** 2


def harmonic_extension(mesh: TriMesh, boundary_values: dict) -> np.ndarray:
    """Extend prescribed boundary node displacements harmonically into the mesh.

    boundary_values maps node index -> (dx, dy); every other boundary node is
    held at zero. Returns a per-node displacement field (n_nodes, 2) that is
    smooth in the interior, for building volume deformations from fin-surface
    motion.
    """
    from scipy.sparse.linalg import spsolve

    K = p1_stiffness(mesh)
    fixed = np.zeros(mesh.n_nodes, dtype=bool)
    fixed[mesh.boundary_nodes()] = True
    vals = np.zeros((mesh.n_nodes, 2))
    for node, disp in boundary_values.items():
        if not fixed[node]:
            raise ValueError(f"node {node} is not a boundary node")
        vals[node] = disp
    free = ~fixed
    out = vals.copy()
    K_ff = K[free][:, free].tocsc()
    rhs = -K[free][:, fixed] @ vals[fixed]
    out[free] = np.column_stack(
        [spsolve(K_ff, rhs[:, 0]), spsolve(K_ff, rhs[:, 1])]
    )
    return out


def smoothing_operator(mesh: TriMesh, e: float | None = None) -> sp.csr_matrix:
    """SPD operator M = I + (e / h_target^2) K on all mesh vertices.

    e = 0 gives the identity; constant displacement fields satisfy M v = v
    exactly (K annihilates constants).
    """
    if e is None:
        e = default_smoothing_weight(mesh.h_target)
    if e < 0:
        raise ValueError("smoothing weight must be nonnegative")
    n = mesh.n_nodes
    if e == 0.0:
        return sp.identity(n, format="csr")
    strength = e / mesh.h_target**2
    return (sp.identity(n, format="csr") + strength * p1_stiffness(mesh)).tocsr()
