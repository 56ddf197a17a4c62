"""Augmented-Lagrangian outer loop for constrained fin-shape optimization.

Standard multiplier-method schedule: each outer iteration minimizes the
merit L = I - sum(lam_i c_i) + (mu/2) sum(c_i^2) to a stationarity level
omega_k with the trust-region loop, then either updates the multipliers
(when the constraint violation is within eta_k, tightening eta) or raises
the penalty (when the violation also failed to halve since the previous
outer iteration); omega tightens every pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..energy import solve_energy
from ..errors import OptimizationStalled, UsageError
from ..flow import solve_flow
from ..meshing.generate import MeshParams
from ..meshing.trimesh import TriMesh
from .problem import AugLagEvaluator, Iterate, ProblemSpec
from .trust import TrustRegionSettings, trust_region_loop

__all__ = ["AugLagSettings", "OptimizationResult", "auglag_outer", "schedule_update"]


@dataclass(frozen=True)
class AugLagSettings:
    """Outer-loop schedule and final constraint tolerances."""

    mu0: float = 10.0
    mu_factor: float = 10.0
    max_outer: int = 8
    eta0: float = 1e-2  # initial acceptable violation (normalized)
    eta_factor: float = 0.1  # ~1/mu0: multiplier steps contract violation at that rate
    eta_min: float = 5e-5  # never demand far below the final tolerances
    omega0: float = 0.05  # initial subproblem stationarity level
    omega_factor: float = 0.5
    omega_min: float = 1e-3
    omega_exit: float = 5e-3  # stationarity needed to declare convergence
    violation_factor: float = 0.5  # required violation shrink per outer pass
    tol_barycenter: float = 1e-4  # final barycenter offset, in pitches
    tol_gradp: float = 1e-3  # final relative drop-rate mismatch
    trust: TrustRegionSettings = field(default_factory=TrustRegionSettings)


@dataclass
class OptimizationResult:
    """Final design with the outer-iteration audit trail."""

    iterate: Iterate
    q0: float  # initial heat rate of the chosen formulation [W/m]
    multipliers: np.ndarray
    mu: float
    history: list
    stop: str  # "converged" | "budget"
    converged: bool

    @property
    def mesh(self) -> TriMesh:
        return self.iterate.mesh

    @property
    def q_unit(self) -> float:
        return self.iterate.q_unit


def _constraints_met(problem: ProblemSpec, cons: np.ndarray,
                     settings: AugLagSettings) -> bool:
    ok = np.all(np.abs(cons[:2]) <= settings.tol_barycenter)
    if problem.gradp_target is not None:
        ok = ok and abs(cons[2]) <= settings.tol_gradp
    return bool(ok)


def schedule_update(lam: np.ndarray, mu: float, eta: float, omega: float,
                    cons: np.ndarray, v_prev: float, settings: AugLagSettings):
    """One multiplier-method update after a subproblem solve.

    Violation within eta: first-order multiplier update and a 1/mu-rate
    tightening of eta (floored at eta_min). Otherwise the penalty grows,
    but only when the violation also failed to shrink by violation_factor
    since the last outer pass (progress under the current penalty is left
    alone). The stationarity level omega tightens every pass regardless:
    constraint accuracy is bounded by subproblem accuracy, and a failed
    pass rerun at unchanged (lam, mu, omega) would reproduce itself.
    """
    v = float(np.max(np.abs(cons)))
    if v <= eta:
        lam = lam - mu * cons
        eta = max(eta * settings.eta_factor, settings.eta_min)
    elif v > settings.violation_factor * v_prev:
        mu = mu * settings.mu_factor
    omega = max(omega * settings.omega_factor, settings.omega_min)
    return lam, mu, eta, omega, v


def auglag_outer(
    problem: ProblemSpec,
    mesh0: TriMesh,
    settings: Optional[AugLagSettings] = None,
    mesh_params: Optional[MeshParams] = None,
) -> OptimizationResult:
    """Run the full constrained optimization from an initial mesh.

    Raises OptimizationStalled when the outer budget ends with constraints
    still violated beyond the final tolerances.
    """
    settings = settings or AugLagSettings()
    flow = solve_flow(mesh0, problem.props, problem.drive)
    thermal = solve_energy(mesh0, flow, problem.props)
    q0 = problem.objective_functional().value(flow, thermal)
    if q0 == 0.0 or not np.isfinite(q0):
        raise UsageError(f"initial heat rate {q0} cannot normalize the objective")
    fin_area = mesh0.extent[0] * mesh0.extent[1] - mesh0.fluid_area()
    if fin_area <= 0:
        raise UsageError("initial cell has no fin area to constrain")
    obj_ref = abs(q0)
    moment_ref = mesh0.extent[0] * fin_area

    lam = np.zeros(problem.n_constraints)
    mu = settings.mu0
    eta = settings.eta0
    omega = settings.omega0
    v_prev = np.inf
    history: list = []
    current = (flow, thermal)

    for outer in range(settings.max_outer):
        evaluator = AugLagEvaluator(problem, lam, mu, obj_ref, moment_ref)
        start = evaluator.iterate_from_states(*current)
        tr = trust_region_loop(
            evaluator, start, settings.trust, problem.box, omega, mesh_params
        )
        it = tr.iterate
        current = (it.flow, it.thermal)
        v = float(np.max(np.abs(it.cons)))
        history.append({
            "outer": outer, "mu": mu, "eta": eta, "omega": omega,
            "multipliers": lam.copy(), "L": it.L, "objective": it.objective,
            "q_unit": it.q_unit, "cons": it.cons.copy(),
            "cons_raw": it.cons_raw.copy(), "violation": v,
            "stop": tr.stop, "n_accepted": tr.n_accepted,
            "inner": tr.history,
        })

        if (_constraints_met(problem, it.cons, settings)
                and tr.stop == "stationary" and omega <= settings.omega_exit):
            return OptimizationResult(
                iterate=it, q0=q0, multipliers=lam, mu=mu,
                history=history, stop="converged", converged=True,
            )

        lam, mu, eta, omega, v_prev = schedule_update(
            lam, mu, eta, omega, it.cons, v_prev, settings
        )

    if not _constraints_met(problem, it.cons, settings):
        raise OptimizationStalled(
            f"outer budget exhausted with constraint violation {v:.3e}", history
        )
    return OptimizationResult(
        iterate=it, q0=q0, multipliers=lam, mu=mu,
        history=history, stop="budget", converged=True,
    )
