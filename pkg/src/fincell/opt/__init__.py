"""Constrained shape optimization: deformation QPs, trust region, multipliers."""

from .auglag import AugLagSettings, OptimizationResult, auglag_outer, schedule_update
from .problem import AugLagEvaluator, Iterate, ProblemSpec, SubproblemModel
from .qp import QPSubproblem, build_qp, solve_bound_qp, solve_qp
from .trust import (
    TrustRegionResult,
    TrustRegionSettings,
    projected_gradient_norm,
    trust_region_loop,
)

__all__ = [
    "AugLagEvaluator",
    "AugLagSettings",
    "Iterate",
    "OptimizationResult",
    "ProblemSpec",
    "QPSubproblem",
    "SubproblemModel",
    "TrustRegionResult",
    "TrustRegionSettings",
    "auglag_outer",
    "build_qp",
    "schedule_update",
    "projected_gradient_norm",
    "solve_bound_qp",
    "solve_qp",
    "trust_region_loop",
]
