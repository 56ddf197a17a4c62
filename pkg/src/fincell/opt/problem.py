"""Shape-optimization problem definitions and the augmented-Lagrangian merit.

Two formulations are supported, differing in how the cell is driven and in
the constraint list:

  * pressure-drop problem: the streamwise mean-pressure drop rate is imposed
    (FixedGradient drive); constraints pin the fin barycenter to the cell
    center (two moment constraints).
  * pressure-and-flow problem: the superficial velocity is imposed
    (FixedVelocity drive) and the realized drop rate is constrained to a
    target value, in addition to the barycenter constraints.

The objective maximizes the array heat rate, so the minimized quantity is
I = -Q / |Q0| with Q0 the initial value; barycenter constraints are
normalized by l_x * V_f0 and the gradient constraint by its target, keeping
the merit function and multipliers dimensionless.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..adjoint import AdjointWorkspace
from ..energy import ThermalState, solve_energy
from ..errors import UsageError
from ..flow import FlowDrive, FlowState, FluidProperties, solve_flow
from ..functionals import ArrayLayout, Barycenter, Functional, GradPx, QUnit, ScaleFactors
from ..geometry import GeometricBox
from ..meshing.trimesh import TriMesh

__all__ = ["ProblemSpec", "Iterate", "SubproblemModel", "AugLagEvaluator"]


@dataclass(frozen=True)
class ProblemSpec:
    """One shape-optimization case: drive, objective form, constraints, box."""

    drive: FlowDrive
    props: FluidProperties
    layout: ArrayLayout
    scale: ScaleFactors
    box: GeometricBox
    objective: str = "normalized"  # or "scaled"
    gradp_target: Optional[float] = None

    def __post_init__(self):
        if self.objective not in ("normalized", "scaled"):
            raise UsageError(f"unknown objective form {self.objective!r}")
        if self.gradp_target is not None and not self.drive.is_velocity:
            raise UsageError("a drop-rate constraint requires a velocity drive")
        if self.gradp_target is None and self.drive.is_velocity:
            raise UsageError("a velocity drive requires the drop-rate target")

    @staticmethod
    def pressure_drop(grad_px: float, props, layout, scale, box,
                      objective: str = "normalized") -> "ProblemSpec":
        """Imposed mean-pressure drop rate; barycenter constraints only."""
        return ProblemSpec(FlowDrive.fixed_gradient(grad_px), props, layout, scale,
                           box, objective)

    @staticmethod
    def pressure_and_flow(u_fix: float, grad_px_target: float, props, layout, scale,
                          box, objective: str = "scaled") -> "ProblemSpec":
        """Imposed superficial velocity plus a drop-rate equality constraint."""
        return ProblemSpec(FlowDrive.fixed_velocity(u_fix), props, layout, scale,
                           box, objective, gradp_target=float(grad_px_target))

    @property
    def n_constraints(self) -> int:
        return 2 if self.gradp_target is None else 3

    def objective_functional(self) -> QUnit:
        return QUnit(self.layout, self.scale, self.props,
                     scaled=self.objective == "scaled")

    def constraint_functionals(self) -> list:
        """Raw (un-normalized) constraint functionals, barycenter first."""
        cons: list = [Barycenter(0), Barycenter(1)]
        if self.gradp_target is not None:
            cons.append(GradPx())
        return cons

    def eval_constraints(self, flow: FlowState) -> np.ndarray:
        """Raw constraint values: barycenter moments and drop-rate mismatch."""
        vals = [fn.value(flow, None) for fn in self.constraint_functionals()]
        if self.gradp_target is not None:
            vals[2] -= self.gradp_target
        return np.array(vals)


@dataclass
class Iterate:
    """One evaluated design: mesh, states, merit value, and reporting data."""

    mesh: TriMesh
    flow: FlowState
    thermal: Optional[ThermalState]
    L: float
    objective: float  # normalized minimized objective
    q_unit: float  # raw heat rate of the chosen formulation [W/m]
    cons_raw: np.ndarray
    cons: np.ndarray  # normalized constraints entering the merit
    values: dict = field(default_factory=dict)


class SubproblemModel:
    """Interface the trust-region loop drives: evaluate designs, supply gradients."""

    def evaluate(self, mesh: TriMesh, warm: Optional[Iterate] = None) -> Iterate:
        raise NotImplementedError

    def gradient(self, iterate: Iterate) -> np.ndarray:
        raise NotImplementedError


class AugLagEvaluator(SubproblemModel):
    """Augmented-Lagrangian merit L = I - sum(lam_i c_i) + (mu/2) sum(c_i^2).

    Constraint and objective normalizations are frozen at construction:
    obj_ref = |Q0|, moment_ref = l_x * V_f0, and the drop-rate target. The
    same instance is reused across trust-region iterations of one subproblem;
    multiplier updates construct a new evaluator.
    """

    def __init__(self, problem: ProblemSpec, lam: np.ndarray, mu: float,
                 obj_ref: float, moment_ref: float):
        lam = np.asarray(lam, dtype=float)
        if len(lam) != problem.n_constraints:
            raise UsageError(
                f"{len(lam)} multipliers for {problem.n_constraints} constraints"
            )
        if mu <= 0 or obj_ref <= 0 or moment_ref <= 0:
            raise UsageError("penalty and normalization factors must be positive")
        self.problem = problem
        self.lam = lam
        self.mu = float(mu)
        self.obj_ref = float(obj_ref)
        self.moment_ref = float(moment_ref)

    def _normalize(self, cons_raw: np.ndarray) -> np.ndarray:
        cons = cons_raw / self.moment_ref
        if self.problem.gradp_target is not None:
            cons[2] = cons_raw[2] / abs(self.problem.gradp_target)
        return cons

    def merit(self, objective: float, cons: np.ndarray) -> float:
        return float(objective - self.lam @ cons + 0.5 * self.mu * (cons @ cons))

    def evaluate(self, mesh: TriMesh, warm: Optional[Iterate] = None) -> Iterate:
        p = self.problem
        init = warm.flow if warm is not None else None
        flow = solve_flow(mesh, p.props, p.drive, init=init)
        thermal = solve_energy(mesh, flow, p.props)
        return self.iterate_from_states(flow, thermal)

    def iterate_from_states(self, flow: FlowState, thermal: ThermalState) -> Iterate:
        """Merit bookkeeping for already-solved states (multiplier updates)."""
        p = self.problem
        q_fn = p.objective_functional()
        q_raw = q_fn.value(flow, thermal)
        objective = -q_raw / self.obj_ref
        cons_raw = p.eval_constraints(flow)
        cons = self._normalize(cons_raw)
        it = Iterate(
            mesh=flow.mesh, flow=flow, thermal=thermal,
            L=self.merit(objective, cons),
            objective=objective, q_unit=q_raw,
            cons_raw=cons_raw, cons=cons,
        )
        it.values = {
            "q_unit": q_raw,
            "grad_px": float(flow.gradP[0]),
            "mean_ux": float(flow.mean_u[0]),
            "lambda": float(thermal.lam),
        }
        return it

    def gradient(self, iterate: Iterate) -> np.ndarray:
        """Shape gradient of the merit at an evaluated design, (n_nodes, 2)."""
        p = self.problem
        ws = AdjointWorkspace(iterate.mesh, iterate.flow, iterate.thermal)
        g = ws.gradient(p.objective_functional()) * (-1.0 / self.obj_ref)
        weights = -self.lam + self.mu * iterate.cons
        refs = [self.moment_ref, self.moment_ref]
        if p.gradp_target is not None:
            refs.append(abs(p.gradp_target))
        for fn, w, ref in zip(p.constraint_functionals(), weights, refs):
            if w == 0.0:
                continue
            g += (w / ref) * ws.gradient(fn)
        return g
