"""Bound-constrained quadratic subproblem for smoothed shape deformations.

Each design step solves, per coordinate component,

    min_S  (1/(2 alpha)) S^T M S + g^T S,     M = I + (e / h^2) K,

subject to componentwise bounds that combine the trust region |S| <= delta,
the geometric box on fin-node coordinates, and zero deformation of the outer
boundary. M is SPD, the bounds are separable, and S = 0 is always feasible,
so the problem is solved exactly by a projected Newton iteration with exact
reduced solves (the active set settles in a handful of iterations).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import QPError
from ..geometry import GeometricBox
from ..meshing.smoothing import smoothing_operator
from ..meshing.trimesh import BoundaryTag, TriMesh

__all__ = ["QPSubproblem", "build_qp", "solve_qp", "solve_bound_qp"]

_OUTER_TAGS = (BoundaryTag.LEFT, BoundaryTag.RIGHT, BoundaryTag.BOTTOM, BoundaryTag.TOP)


@dataclass
class QPSubproblem:
    """Assembled deformation subproblem on one mesh.

    matrix is the per-component smoothing operator M; bounds are (n_nodes, 2)
    with the trust region and box already intersected; fixed marks nodes whose
    deformation is pinned to zero.
    """

    matrix: sp.csr_matrix
    alpha: float
    gradient: np.ndarray  # (n_nodes, 2) linear term
    lower: np.ndarray  # (n_nodes, 2)
    upper: np.ndarray  # (n_nodes, 2)
    fixed: np.ndarray  # (n_nodes,) bool


def build_qp(
    mesh: TriMesh,
    gradient: np.ndarray,
    delta_tr: float,
    alpha: float = 1.0,
    e: Optional[float] = None,
    box: Optional[GeometricBox] = None,
) -> QPSubproblem:
    """Assemble the deformation QP for one design iteration."""
    if delta_tr <= 0:
        raise QPError(f"trust radius must be positive, got {delta_tr:.3e}")
    try:
        M = smoothing_operator(mesh, e)
    except ValueError as exc:
        raise QPError(str(exc)) from exc
    n = mesh.n_nodes
    lo = np.full((n, 2), -delta_tr)
    hi = np.full((n, 2), delta_tr)
    if box is not None:
        fin = mesh.boundary_nodes(BoundaryTag.FIN)
        xy = mesh.nodes[fin]
        lo[fin, 0] = np.maximum(lo[fin, 0], box.xlo - xy[:, 0])
        hi[fin, 0] = np.minimum(hi[fin, 0], box.xhi - xy[:, 0])
        lo[fin, 1] = np.maximum(lo[fin, 1], box.ylo - xy[:, 1])
        hi[fin, 1] = np.minimum(hi[fin, 1], box.yhi - xy[:, 1])
        dust = max(np.max(lo[fin]), -np.min(hi[fin]), 0.0)
        if dust > 1e-3 * max(mesh.extent):
            raise QPError(f"fin nodes violate the geometric box by {dust:.3e} m")
        # Keep S = 0 feasible against round-off and the sub-micron outward
        # drift of the remesh area correction; overhanging nodes keep zero
        # outward room, so they can only move back inside.
        lo = np.minimum(lo, 0.0)
        hi = np.maximum(hi, 0.0)
    fixed = np.zeros(n, dtype=bool)
    fixed[mesh.boundary_nodes(list(_OUTER_TAGS))] = True
    return QPSubproblem(
        matrix=M, alpha=alpha, gradient=np.asarray(gradient, dtype=float),
        lower=lo, upper=hi, fixed=fixed,
    )


def solve_bound_qp(
    H: sp.spmatrix,
    g: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    tol_rel: float = 1e-12,
    max_iter: int = 100,
) -> np.ndarray:
    """Exact minimizer of 1/2 s^T H s + g^T s subject to lo <= s <= hi.

    H must be SPD; projected Newton with exact solves on the inactive set and
    a backtracking search along the projection arc. Converges when the
    projected gradient drops below tol_rel * ||g||_inf.
    """
    H = H.tocsr()
    n = len(g)
    if np.any(lo > 0.0) or np.any(hi < 0.0):
        raise QPError("zero deformation is infeasible for the given bounds")
    s = np.zeros(n)
    gnorm = np.max(np.abs(g)) if n else 0.0
    if gnorm == 0.0:
        return s
    tol = tol_rel * gnorm
    band = 1e-13 * max(np.max(np.abs(lo), initial=0.0), np.max(np.abs(hi), initial=0.0), 1e-300)

    def q(x):
        return 0.5 * (x @ (H @ x)) + g @ x

    fcur = 0.0
    for _ in range(max_iter):
        r = H @ s + g
        pg = s - np.clip(s - r, lo, hi)
        if np.max(np.abs(pg)) <= tol:
            return s
        binding = ((s <= lo + band) & (r > 0.0)) | ((s >= hi - band) & (r < 0.0))
        free = ~binding
        d = np.zeros(n)
        if np.any(free):
            H_ff = H[free][:, free].tocsc()
            try:
                d[free] = spla.splu(H_ff).solve(-r[free])
            except RuntimeError as exc:
                raise QPError(f"reduced Hessian factorization failed: {exc}") from exc
        step = 1.0
        for _ in range(50):
            s_new = np.clip(s + step * d, lo, hi)
            move = s_new - s
            slope = r @ move
            if slope <= 0.0 and q(s_new) <= fcur + 1e-4 * slope:
                break
            step *= 0.5
        else:
            raise QPError("projected line search failed (Hessian not SPD?)")
        s = s_new
        fcur = q(s)
    raise QPError("bound-constrained QP did not converge")


def solve_qp(qp: QPSubproblem):
    """Solve the deformation QP.

    Returns (S, dL): the deformation field (n_nodes, 2) with fixed rows zero,
    and the predicted change dL = 1/(2 alpha) S^T M S + g^T S <= 0.
    """
    if qp.alpha <= 0:
        raise QPError(f"step scaling alpha must be positive, got {qp.alpha}")
    free = ~qp.fixed
    H = (qp.matrix[free][:, free] / qp.alpha).tocsr()
    n = qp.matrix.shape[0]
    S = np.zeros((n, 2))
    for comp in range(2):
        S[free, comp] = solve_bound_qp(
            H, qp.gradient[free, comp], qp.lower[free, comp], qp.upper[free, comp]
        )
    quad = sum(S[:, c] @ (qp.matrix @ S[:, c]) for c in range(2))
    dL = 0.5 / qp.alpha * quad + float(np.sum(qp.gradient * S))
    return S, dL
