"""Finite element core: reference elements, dof maps, assembly, solvers."""

from .assembly import (
    CS_H,
    BlockCOO,
    EdgeBatch,
    cs_perturb_coords,
    cs_perturb_state,
    edge_batches,
    eval_grads,
    eval_values,
    geom_tables,
    scalar_cs_grad,
    tri_geometry,
)
from .linear import Factorization, solve_sparse
from .newton import NewtonOptions, NewtonResult, newton_solve
from .reference import (
    EDGE_QP,
    EDGE_QW,
    EDGE_VERTICES,
    TRI_QP,
    TRI_QW,
    edge_ref_points,
    p1_basis,
    p1_grads,
    p2_basis,
    p2_grads,
)
from .spaces import FieldMap, P1Space, P2Space, SystemMap

__all__ = [
    "CS_H",
    "BlockCOO",
    "EdgeBatch",
    "cs_perturb_coords",
    "cs_perturb_state",
    "edge_batches",
    "eval_grads",
    "eval_values",
    "geom_tables",
    "scalar_cs_grad",
    "tri_geometry",
    "Factorization",
    "solve_sparse",
    "NewtonOptions",
    "NewtonResult",
    "newton_solve",
    "EDGE_QP",
    "EDGE_QW",
    "EDGE_VERTICES",
    "TRI_QP",
    "TRI_QW",
    "edge_ref_points",
    "p1_basis",
    "p1_grads",
    "p2_basis",
    "p2_grads",
    "FieldMap",
    "P1Space",
    "P2Space",
    "SystemMap",
]
