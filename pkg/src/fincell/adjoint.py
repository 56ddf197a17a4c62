"""Discrete-adjoint shape sensitivities chained through the cell systems.

Both cell problems are solved as reduced root problems, R_H(y; X) = 0 for the
flow and R_E(z; y, X) = 0 for the temperature mode, with X the mesh node
coordinates. For a scalar functional J(y, z, X) the total derivative is

    g = dJ/dX - psi_E^T dR_E/dX - psi_H^T dR_H/dX,
    A_E^T psi_E = (dJ/dz)^T,
    A_H^T psi_H = (dJ/dy)^T - B^T psi_E,       B = dR_E/dy,

where A_E and A_H are the converged Newton Jacobians. All blocks come from
the same complex-step element kernels as the forward solves, so g is the
exact derivative of the discrete objective; the matching tangent
linearization (dy, dz for a given dX) is provided for dot-product
verification. AdjointWorkspace factorizes each Jacobian once and reuses it
across functionals evaluated at the same state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .energy import ThermalState
from .errors import UsageError
from .fem.linear import Factorization
from .flow import FlowState
from .functionals import Functional
from .meshing.trimesh import TriMesh

__all__ = [
    "AdjointStates",
    "AdjointWorkspace",
    "adjoint_solve",
    "shape_gradient",
    "tangent_solve",
    "functional_gradient",
]


@dataclass
class AdjointStates:
    """Adjoint vectors of the two reduced systems (None where not needed)."""

    psi_flow: Optional[np.ndarray]
    psi_energy: Optional[np.ndarray]


class AdjointWorkspace:
    """Lazy, reusable adjoint factorizations at one converged state pair."""

    def __init__(self, mesh: TriMesh, flow: FlowState, thermal: Optional[ThermalState] = None):
        if flow.model.mesh is not mesh:
            raise UsageError("flow state was not computed on the given mesh")
        if thermal is not None and thermal.model.flow is not flow:
            raise UsageError("thermal state was not computed from the given flow state")
        self.mesh = mesh
        self.flow = flow
        self.thermal = thermal
        self._flow_fact: Optional[Factorization] = None
        self._energy_fact: Optional[Factorization] = None
        self._coupling = None

    # -- cached blocks ---------------------------------------------------------
    def flow_factorization(self) -> Factorization:
        if self._flow_fact is None:
            self._flow_fact = Factorization(
                self.flow.model.jacobian_reduced(self.flow.red).tocsc()
            )
        return self._flow_fact

    def energy_factorization(self) -> Factorization:
        if self.thermal is None:
            raise UsageError("workspace has no thermal state")
        if self._energy_fact is None:
            self._energy_fact = Factorization(
                self.thermal.model.jacobian_reduced(self.thermal.red).tocsc()
            )
        return self._energy_fact

    def coupling(self):
        if self._coupling is None:
            self._coupling = self.thermal.model.coupling_matrix(self.thermal.red)
        return self._coupling

    # -- solves ------------------------------------------------------------------
    def adjoint_states(self, functional: Functional) -> AdjointStates:
        """Energy adjoint first, then the flow adjoint, for one functional."""
        psi_e = None
        rhs_flow = functional.d_flow(self.flow, self.thermal)
        djdz = functional.d_energy(self.flow, self.thermal)
        if djdz is not None and np.any(djdz):
            if self.thermal is None:
                raise UsageError(f"functional {functional.name} needs a thermal state")
            psi_e = self.energy_factorization().solve(djdz, trans="T")
            pullback = self.coupling().T @ psi_e
            rhs_flow = -pullback if rhs_flow is None else rhs_flow - pullback
        psi_h = None
        if rhs_flow is not None and np.any(rhs_flow):
            psi_h = self.flow_factorization().solve(rhs_flow, trans="T")
        return AdjointStates(psi_flow=psi_h, psi_energy=psi_e)

    def gradient(self, functional: Functional, adjoints: Optional[AdjointStates] = None) -> np.ndarray:
        """Total derivative w.r.t. node coordinates, (n_nodes, 2)."""
        if adjoints is None:
            adjoints = self.adjoint_states(functional)
        g = functional.d_geometry(self.flow, self.thermal)
        g = np.zeros((self.mesh.n_nodes, 2)) if g is None else np.array(g)
        if adjoints.psi_energy is not None:
            g -= self.thermal.model.geometric_product(self.thermal.red, adjoints.psi_energy)
        if adjoints.psi_flow is not None:
            g -= self.flow.model.geometric_product(self.flow.red, adjoints.psi_flow)
        if not np.all(np.isfinite(g)):
            raise UsageError("shape gradient contains non-finite entries")
        return g

    def tangent(self, dX: np.ndarray):
        """Directional state derivatives (dy, dz) for a coordinate direction."""
        dy = self.flow_factorization().solve(
            -self.flow.model.geometric_tangent(self.flow.red, dX)
        )
        dz = None
        if self.thermal is not None:
            rhs = self.thermal.model.geometric_tangent(self.thermal.red, dX) + self.coupling() @ dy
            dz = self.energy_factorization().solve(-rhs)
        return dy, dz


def adjoint_solve(mesh: TriMesh, flow: FlowState, thermal: Optional[ThermalState],
                  functional: Functional) -> AdjointStates:
    """Solve the energy adjoint, then the flow adjoint, for one functional."""
    return AdjointWorkspace(mesh, flow, thermal).adjoint_states(functional)


def shape_gradient(mesh: TriMesh, flow: FlowState, thermal: Optional[ThermalState],
                   adjoints: AdjointStates, functional: Functional) -> np.ndarray:
    """Total derivative of the functional w.r.t. node coordinates, (n_nodes, 2)."""
    return AdjointWorkspace(mesh, flow, thermal).gradient(functional, adjoints)


def tangent_solve(mesh: TriMesh, flow: FlowState, thermal: Optional[ThermalState],
                  dX: np.ndarray):
    """Directional state derivatives (dy, dz) for a node-coordinate direction."""
    return AdjointWorkspace(mesh, flow, thermal).tangent(dX)


def functional_gradient(mesh: TriMesh, flow: FlowState, thermal: Optional[ThermalState],
                        functional: Functional):
    """Value and shape gradient of one functional, (float, (n_nodes, 2))."""
    ws = AdjointWorkspace(mesh, flow, thermal)
    return functional.value(flow, thermal), ws.gradient(functional)
