"""Trust-region descent on the merit function via smoothed deformation QPs.

Each iteration solves the bound-constrained deformation subproblem on the
current mesh, deforms the mesh by the step, re-evaluates the merit, and
accepts or rejects based on the ratio of actual to predicted decrease

    rho = (L(trial) - L(current)) / dL,   dL = 1/(2 alpha) S^T M S + g^T S.

The gradient is recomputed only after accepted steps. The gradient scale
used to normalize the QP linear term is frozen at the first iteration of
the subproblem and survives remeshing, so the step scaling alpha keeps a
consistent meaning across the whole subproblem.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..errors import (
    DeformationError,
    MeshError,
    NonConvergence,
    NonDecayingError,
    OptimizationStalled,
    QPError,
)
from ..geometry import GeometricBox
from ..meshing.generate import MeshParams, remesh
from ..meshing.trimesh import BoundaryTag, TriMesh
from .problem import Iterate, SubproblemModel
from .qp import build_qp, solve_qp

__all__ = ["TrustRegionSettings", "TrustRegionResult", "trust_region_loop"]

_MAX_DEFORM_FAILURES = 3  # consecutive failures before a forced remesh


@dataclass(frozen=True)
class TrustRegionSettings:
    """Trust-region tuning constants; lengths are relative to the cell pitch."""

    delta0_rel: float = 0.02  # initial radius / streamwise pitch
    delta_min_rel: float = 1e-5  # collapse threshold / streamwise pitch
    delta_max_rel: float = 0.25  # radius cap / smallest box (or cell) extent
    accept: float = 0.15  # accept step when rho exceeds this
    expand_threshold: float = 0.75  # expand when rho exceeds this at the radius
    expand: float = 2.0
    shrink: float = 0.25
    max_iter: int = 40
    remesh_period: int = 5  # accepted steps between scheduled remeshes
    quality_floor: float = 0.15  # remesh early when mesh quality drops below
    deform_quality: float = 0.05  # reject deformations below this quality
    alpha: float = 1.0  # step scaling of the QP quadratic term
    e: Optional[float] = None  # smoothing weight; None picks (3 h)^2


@dataclass
class TrustRegionResult:
    iterate: Iterate
    history: list = field(default_factory=list)
    stop: str = "max_iter"  # "stationary" | "radius" | "max_iter"
    n_accepted: int = 0
    grad_scale: float = 0.0


def projected_gradient_norm(mesh: TriMesh, gradient: np.ndarray,
                            box: Optional[GeometricBox] = None) -> float:
    """Inf-norm of the one-sided reduced gradient at zero deformation.

    Outer-boundary nodes are pinned; fin nodes sitting on a box face only
    count the component pointing into the feasible side.
    """
    g = np.asarray(gradient, dtype=float)
    pg = np.abs(g.copy())
    if box is not None:
        fin = mesh.boundary_nodes(BoundaryTag.FIN)
        xy = mesh.nodes[fin]
        tol = 1e-9 * max(mesh.extent)
        for comp, (blo, bhi) in enumerate([(box.xlo, box.xhi), (box.ylo, box.yhi)]):
            at_lo = fin[xy[:, comp] <= blo + tol]
            at_hi = fin[xy[:, comp] >= bhi - tol]
            pg[at_lo, comp] = np.maximum(0.0, -g[at_lo, comp])
            pg[at_hi, comp] = np.maximum(0.0, g[at_hi, comp])
    outer = mesh.boundary_nodes(
        [BoundaryTag.LEFT, BoundaryTag.RIGHT, BoundaryTag.BOTTOM, BoundaryTag.TOP]
    )
    pg[outer] = 0.0
    return float(np.max(pg)) if pg.size else 0.0


def _remeshed(model: SubproblemModel, mesh: TriMesh,
              params: Optional[MeshParams]) -> Iterate:
    """Remesh and re-evaluate, relaxing the quality gate before giving up.

    Evolved shapes can be unmeshable at the default gate on coarse meshes; a
    lower-quality fresh mesh still beats continuing on a tangled one. Node
    ids change across remesh, so the re-evaluation is a cold start.
    """
    params = params or MeshParams()
    last_exc: Optional[MeshError] = None
    for gate in (params.quality_gate, 0.18, 0.12):
        if gate > params.quality_gate:
            continue
        try:
            fresh = remesh(mesh, params=replace(params, quality_gate=gate))
            return model.evaluate(fresh, warm=None)
        except MeshError as exc:
            last_exc = exc
    raise last_exc


def trust_region_loop(
    model: SubproblemModel,
    start,
    settings: Optional[TrustRegionSettings] = None,
    box: Optional[GeometricBox] = None,
    omega: float = 1e-3,
    mesh_params: Optional[MeshParams] = None,
) -> TrustRegionResult:
    """Minimize the model's merit over node positions until omega-stationarity.

    `start` is either a mesh (evaluated here) or an already evaluated Iterate.
    Raises OptimizationStalled when deformation keeps failing after a forced
    remesh or the remesher itself fails.
    """
    settings = settings or TrustRegionSettings()
    current = start if isinstance(start, Iterate) else model.evaluate(start)
    mesh0 = current.mesh
    pitch = mesh0.extent[0]
    if box is not None:
        span = min(box.xhi - box.xlo, box.yhi - box.ylo)
    else:
        span = min(mesh0.extent)
    delta = settings.delta0_rel * pitch
    delta_min = settings.delta_min_rel * pitch
    delta_max = settings.delta_max_rel * span

    grad = model.gradient(current)
    s_g = float(np.max(np.abs(grad)))
    history: list = []
    result = TrustRegionResult(iterate=current, history=history, grad_scale=s_g)
    if s_g == 0.0:
        result.stop = "stationary"
        return result

    n_accepted = 0
    accepted_since_remesh = 0
    deform_fails = 0
    forced_remeshes = 0

    for it in range(settings.max_iter):
        ghat = grad / s_g
        stat = projected_gradient_norm(current.mesh, ghat, box)
        row = {
            "iter": it, "L": current.L, "objective": current.objective,
            "q_unit": current.q_unit, "cons": current.cons.copy(),
            "stationarity": stat, "delta": delta, "rho": np.nan,
            "accepted": False, "remeshed": False,
            "n_nodes": current.mesh.n_nodes,
            "min_quality": current.mesh.min_quality(),
        }
        if stat <= omega:
            history.append(row)
            result.stop = "stationary"
            break
        if delta < delta_min:
            history.append(row)
            result.stop = "radius"
            break

        qp = build_qp(current.mesh, ghat, delta, settings.alpha, settings.e, box)
        S, dL = solve_qp(qp)
        # dL predicts the change of L / s_g (the QP linear term used ghat),
        # so the actual decrease is compared in the same normalized units.
        row["step_inf"] = float(np.max(np.abs(S)))
        row["dL"] = dL
        if dL >= -1e-15 * max(1.0, abs(current.L) / s_g):
            # QP found no usable decrease; distinguish true stationarity
            # (zero step regardless of radius) from model breakdown.
            history.append(row)
            if row["step_inf"] <= 1e-14 * delta:
                result.stop = "stationary"
                break
            delta *= settings.shrink
            continue

        try:
            trial_mesh = current.mesh.deform(S, min_quality=settings.deform_quality)
        except DeformationError:
            deform_fails += 1
            row["deform_failed"] = True
            history.append(row)
            if deform_fails >= _MAX_DEFORM_FAILURES:
                if forced_remeshes >= 1:
                    raise OptimizationStalled(
                        "deformation keeps failing after a forced remesh", history
                    )
                try:
                    current = _remeshed(model, current.mesh, mesh_params)
                except (MeshError, NonConvergence, NonDecayingError) as exc:
                    raise OptimizationStalled(f"forced remesh failed: {exc}", history)
                grad = model.gradient(current)
                accepted_since_remesh = 0
                deform_fails = 0
                forced_remeshes += 1
            else:
                delta *= settings.shrink
            continue

        try:
            trial = model.evaluate(trial_mesh, warm=current)
        except (NonConvergence, NonDecayingError):
            row["solve_failed"] = True
            history.append(row)
            delta *= settings.shrink
            continue

        rho = (trial.L - current.L) / (s_g * dL)
        row["rho"] = rho
        accepted = rho > settings.accept
        row["accepted"] = accepted
        if accepted:
            deform_fails = 0
            forced_remeshes = 0
            current = trial
            n_accepted += 1
            accepted_since_remesh += 1
            if (accepted_since_remesh >= settings.remesh_period
                    or current.mesh.min_quality() < settings.quality_floor):
                try:
                    current = _remeshed(model, current.mesh, mesh_params)
                    row["remeshed"] = True
                except (MeshError, NonConvergence, NonDecayingError) as exc:
                    # Not fatal while the accepted mesh remains deformable;
                    # the next accepted step retries.
                    if current.mesh.min_quality() < settings.deform_quality:
                        history.append(row)
                        raise OptimizationStalled(f"remesh failed: {exc}", history)
                    row["remesh_failed"] = True
                accepted_since_remesh = 0
            grad = model.gradient(current)
            if (rho > settings.expand_threshold
                    and row["step_inf"] >= 0.99 * delta):
                delta = min(settings.expand * delta, delta_max)
        else:
            delta *= settings.shrink
        history.append(row)
    else:
        result.stop = "max_iter"

    result.iterate = current
    result.n_accepted = n_accepted
    return result
