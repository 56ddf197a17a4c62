"""Periodic temperature mode and streamwise decay rate of the developed regime.

The temperature field of the developed array decomposes as
T - T_s = T0 (theta / <theta>) exp(lambda x), with theta cell-periodic, zero
on the (isothermal, colder) fin surface and anchored to 1 at the cell-corner
master node. Substituting the decomposition into the energy equation turns
the streamwise envelope into the volume source

    sigma = lambda (2 k d theta/dx - rho c u_x theta) + lambda^2 k theta,

and averaging the equation over the cell yields a quadratic for lambda,

    lambda^2 k <theta> - lambda rho c <u_x theta> - k Phi = 0,

with Phi = (1/V_cell) closed-integral grad(theta) . n_fs ds over the fin
surface (n_fs pointing into the fluid, so Phi >= 0). Only the negative root
is physical; it is solved for directly as an appended scalar unknown.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ComplexRootError, DegenerateThermalState, NonDecayingError
from .fem.assembly import (
    CS_H,
    BlockCOO,
    cs_perturb_coords,
    cs_perturb_state,
    edge_batches,
    geom_tables,
    scalar_cs_grad,
    tri_geometry,
)
from .fem.linear import Factorization
from .fem.newton import NewtonOptions, NewtonResult, newton_solve
from .fem.reference import TRI_QP, p2_basis
from .fem.spaces import FieldMap, SystemMap
from .flow import FlowState, FluidProperties
from .meshing.trimesh import BoundaryTag, TriMesh

__all__ = [
    "InterfacialAverages",
    "ThermalState",
    "EnergyModel",
    "solve_energy",
    "lambda_root",
    "interfacial_flux_average",
]

_P2B = p2_basis(TRI_QP)


@dataclass(frozen=True)
class InterfacialAverages:
    """Cell averages entering the decay-rate quadratic."""

    theta_avg: float  # <theta>
    utheta_x_avg: float  # <u_x theta>
    flux_avg: float  # Phi = (1/V_cell) closed-integral grad(theta).n_fs ds
    alpha: float  # thermal diffusivity used to form `a`

    @property
    def a(self) -> float:
        return self.utheta_x_avg / (2.0 * self.alpha * self.theta_avg)

    @property
    def F(self) -> float:
        return -self.flux_avg / self.theta_avg


def lambda_root(av: InterfacialAverages, alpha: Optional[float] = None) -> float:
    """Negative root of the decay quadratic, lambda = a - sqrt(a^2 - F)."""
    if av.theta_avg <= 0.0:
        raise DegenerateThermalState(f"<theta> = {av.theta_avg:.3e} is not positive")
    a = av.utheta_x_avg / (2.0 * (alpha or av.alpha) * av.theta_avg)
    F = av.F
    disc = a * a - F
    if disc < 0.0:
        raise ComplexRootError(a=a, F=F)
    return a - np.sqrt(disc)


@dataclass
class ThermalState:
    """Converged temperature mode on one mesh."""

    model: "EnergyModel"
    red: np.ndarray
    theta: np.ndarray  # full P2 dof values
    lam: float  # decay rate [1/m], <= 0 for cooling arrays
    averages: InterfacialAverages
    theta_max: float
    newton: Optional[NewtonResult] = None

    @property
    def mesh(self) -> TriMesh:
        return self.model.mesh


class EnergyModel:
    """Discrete bordered system for (theta, lambda) given a converged flow."""

    def __init__(self, flow: FlowState, props: FluidProperties):
        self.mesh = flow.mesh
        self.props = props
        self.flow = flow
        fm = flow.model
        self.V = fm.V
        self.anchor = self.V.alias[self.mesh.corner_node()]
        dirichlet = {int(d): 0.0 for d in self.V.boundary_dofs(BoundaryTag.FIN)}
        dirichlet[int(self.anchor)] = 1.0
        self.tmap = FieldMap(self.V, 1, dirichlet)
        self.system = SystemMap([self.tmap], n_scalars=1)
        self.coords = fm.coords
        self._w, self._dN2 = fm._w, fm._dN2
        self.u_e = flow.u[self.V.cell_dofs]  # (nt, 6, 2), frozen input
        x0, y0, x1, y1 = self.mesh.domain
        self.cell_volume = (x1 - x0) * (y1 - y0)
        self._fin_batches = edge_batches(self.mesh, self.mesh.boundary_tag == BoundaryTag.FIN)
        _, invJT = tri_geometry(self.coords)
        self._invJT = invJT

    # -- kernels ------------------------------------------------------------
    def _volume(self, w, dN2, t_e, u_e, lam):
        """Element residual of the mode equation plus cell integrals.

        Returns (r_t (nt,6), int_theta (nt,), int_utheta (nt,))."""
        rho, c, k = self.props.rho, self.props.c, self.props.k
        tq = np.einsum("lq,nl->nq", _P2B, t_e)
        gt = np.einsum("nlqd,nl->nqd", dN2, t_e)
        uq = np.einsum("lq,nlc->nqc", _P2B, u_e)
        conv = rho * c * np.einsum("nqd,nqd->nq", uq, gt)
        sigma = lam * (2.0 * k * gt[:, :, 0] - rho * c * uq[:, :, 0] * tq) + lam * lam * k * tq
        r_t = np.einsum("nq,nq,lq->nl", w, conv - sigma, _P2B)
        r_t = r_t + k * np.einsum("nq,nqd,nlqd->nl", w, gt, dN2)
        int_theta = np.einsum("nq,nq->n", w, tq)
        int_utheta = np.einsum("nq,nq,nq->n", w, uq[:, :, 0], tq)
        return r_t, int_theta, int_utheta

    def _edge_flux(self, batch, coords_e, t_e):
        """Per-edge integral of grad(theta).n_fs from gathered parent arrays."""
        length, n_fs = batch.geometry(coords_e)
        _, invJT = tri_geometry(coords_e)
        dN = np.einsum("nde,lqe->nlqd", invJT, batch.grads_p2)
        gt = np.einsum("nlqd,nl->nqd", dN, t_e)
        flux_q = np.einsum("nqd,nd->nq", gt, n_fs)
        return length * (flux_q @ batch.qw)

    def _root_from_integrals(self, int_theta, int_utheta, int_flux):
        """Negative decay root as a complex-analytic function of the three
        accumulated cell integrals."""
        v = self.cell_volume
        theta_avg = int_theta / v
        if np.real(theta_avg) <= 0.0:
            raise DegenerateThermalState(f"<theta> = {np.real(theta_avg):.3e} is not positive")
        a = (int_utheta / v) / (2.0 * self.props.alpha * theta_avg)
        F = -(int_flux / v) / theta_avg
        disc = a * a - F
        if np.real(disc) < 0.0:
            raise ComplexRootError(a=float(np.real(a)), F=float(np.real(F)))
        return a - np.sqrt(disc)

    def _integrals(self, t_full, lam=None):
        t_e = t_full[self.V.cell_dofs]
        tq = np.einsum("lq,nl->nq", _P2B, t_e)
        uq = np.einsum("lq,nlc->nqc", _P2B, self.u_e)
        int_theta = np.einsum("nq,nq->", self._w, tq)
        int_utheta = np.einsum("nq,nq,nq->", self._w, uq[:, :, 0], tq)
        int_flux = 0.0
        for batch in self._fin_batches:
            int_flux = int_flux + self._edge_flux(
                batch, self.coords[batch.parents], t_full[self.V.cell_dofs[batch.parents]]
            ).sum()
        return int_theta, int_utheta, int_flux

    def averages(self, t_full: np.ndarray) -> InterfacialAverages:
        i_t, i_ut, i_f = self._integrals(t_full)
        v = self.cell_volume
        return InterfacialAverages(
            theta_avg=float(i_t) / v,
            utheta_x_avg=float(i_ut) / v,
            flux_avg=float(i_f) / v,
            alpha=self.props.alpha,
        )

    # -- residual / jacobian --------------------------------------------------
    def residual_reduced(self, x_red: np.ndarray) -> np.ndarray:
        t_full, scal = self.system.expand(x_red)
        lam = scal[0]
        r_t, _, _ = self._volume(self._w, self._dN2, t_full[self.V.cell_dofs], self.u_e, lam)
        r_full = np.zeros(self.V.n_dofs)
        np.add.at(r_full, self.V.cell_dofs, r_t)
        i_t, i_ut, i_f = self._integrals(t_full)
        row = lam - self._root_from_integrals(i_t, i_ut, i_f)
        return self.system.reduce_residual([r_full], np.array([row]))

    def jacobian_reduced(self, x_red: np.ndarray):
        t_full, scal = self.system.expand(x_red)
        lam = scal[0]
        t_e = t_full[self.V.cell_dofs]
        nf = self.system.n_full
        row_lam = nf - 1
        coo = BlockCOO((nf, nf))
        rows_t = self.V.cell_dofs  # (nt, 6)
        i_t, i_ut, i_f = self._integrals(t_full)
        droot = scalar_cs_grad(self._root_from_integrals, (i_t, i_ut, i_f))
        # theta slots: volume terms and row coupling through the two integrals
        for l in range(6):
            r_t, d_it, d_iut = self._volume(
                self._w, self._dN2, cs_perturb_state(t_e, (l,)), self.u_e, lam
            )
            col = rows_t[:, l]
            coo.add(rows_t, col[:, None], r_t.imag / CS_H)
            row_vals = -(droot[0] * d_it.imag + droot[1] * d_iut.imag) / CS_H
            coo.add(np.full_like(col, row_lam), col, row_vals)
        # theta slots of the fin-edge flux integral feeding the row
        for batch in self._fin_batches:
            dofs = self.V.cell_dofs[batch.parents]
            coords_e = self.coords[batch.parents]
            t_e_b = t_full[dofs]
            for l in range(6):
                dflux = (
                    self._edge_flux(batch, coords_e, cs_perturb_state(t_e_b, (l,))).imag
                    / CS_H
                )
                coo.add(np.full(len(dofs), row_lam), dofs[:, l], -droot[2] * dflux)
        # lambda column
        r_t, _, _ = self._volume(self._w, self._dN2, t_e, self.u_e, lam + 1j * CS_H)
        coo.add(rows_t, np.full(rows_t.shape, row_lam), r_t.imag / CS_H)
        coo.add(np.array([row_lam]), np.array([row_lam]), np.array([1.0]))
        return self.system.reduce_matrix(coo.tocsr())

    def coupling_matrix(self, x_red: np.ndarray):
        """d(R_energy)/d(flow reduced vector) as a sparse matrix."""
        t_full, scal = self.system.expand(x_red)
        lam = scal[0]
        t_e = t_full[self.V.cell_dofs]
        fm = self.flow.model
        coo = BlockCOO((self.system.n_full, fm.system.n_full))
        rows_t = self.V.cell_dofs
        row_lam = self.system.n_full - 1
        i_t, i_ut, i_f = self._integrals(t_full)
        droot = scalar_cs_grad(self._root_from_integrals, (i_t, i_ut, i_f))
        for l in range(6):
            for comp in range(2):
                r_t, _, d_iut = self._volume(
                    self._w, self._dN2, t_e, cs_perturb_state(self.u_e, (l, comp)), lam
                )
                col = 2 * rows_t[:, l] + comp
                coo.add(rows_t, col[:, None], r_t.imag / CS_H)
                coo.add(
                    np.full_like(col, row_lam), col, -droot[1] * d_iut.imag / CS_H
                )
        full = coo.tocsr()
        return (self.system.C.T @ full @ fm.system.C).tocsr()

    # -- geometric derivatives -------------------------------------------------
    def geometric_product(self, x_red: np.ndarray, psi_red: np.ndarray) -> np.ndarray:
        """psi^T dR/dX over mesh vertices, (n_nodes, 2)."""
        t_full, scal = self.system.expand(x_red)
        lam = scal[0]
        t_e = t_full[self.V.cell_dofs]
        psi_full = self.system.C @ psi_red
        psi_t = psi_full[: self.tmap.n_full]
        psi_lam = psi_full[-1]
        psi_t_e = psi_t[self.V.cell_dofs]
        i_t, i_ut, i_f = self._integrals(t_full)
        droot = scalar_cs_grad(self._root_from_integrals, (i_t, i_ut, i_f))
        out = np.zeros((self.mesh.n_nodes, 2))
        tris = self.mesh.triangles
        for v in range(3):
            for c in range(2):
                coords_p = cs_perturb_coords(self.coords, v, c)
                w, dN2 = geom_tables(coords_p)
                r_t, d_it, d_iut = self._volume(w, dN2, t_e, self.u_e, lam)
                contrib = np.einsum("nl,nl->n", psi_t_e, r_t.imag) / CS_H
                contrib -= psi_lam * (droot[0] * d_it.imag + droot[1] * d_iut.imag) / CS_H
                np.add.at(out[:, c], tris[:, v], contrib)
                for batch in self._fin_batches:
                    dflux = (
                        self._edge_flux(
                            batch,
                            coords_p[batch.parents],
                            t_full[self.V.cell_dofs[batch.parents]],
                        ).imag
                        / CS_H
                    )
                    np.add.at(
                        out[:, c],
                        tris[batch.parents, v],
                        -psi_lam * droot[2] * dflux,
                    )
        return out

    def geometric_tangent(self, x_red: np.ndarray, dX: np.ndarray) -> np.ndarray:
        """(dR/dX) dX of the reduced energy residual."""
        t_full, scal = self.system.expand(x_red)
        lam = scal[0]
        t_e = t_full[self.V.cell_dofs]
        tris = self.mesh.triangles
        i_t, i_ut, i_f = self._integrals(t_full)
        droot = scalar_cs_grad(self._root_from_integrals, (i_t, i_ut, i_f))
        dr_full = np.zeros(self.V.n_dofs)
        drow = 0.0
        for v in range(3):
            for c in range(2):
                weight = dX[tris[:, v], c]
                if not np.any(weight):
                    continue
                coords_p = cs_perturb_coords(self.coords, v, c)
                w, dN2 = geom_tables(coords_p)
                r_t, d_it, d_iut = self._volume(w, dN2, t_e, self.u_e, lam)
                np.add.at(dr_full, self.V.cell_dofs, weight[:, None] * r_t.imag / CS_H)
                drow -= weight @ (droot[0] * d_it.imag + droot[1] * d_iut.imag) / CS_H
                for batch in self._fin_batches:
                    dflux = (
                        self._edge_flux(
                            batch,
                            coords_p[batch.parents],
                            t_full[self.V.cell_dofs[batch.parents]],
                        ).imag
                        / CS_H
                    )
                    drow -= droot[2] * (weight[batch.parents] @ dflux)
        return self.system.reduce_residual([dr_full], np.array([drow]))

    # -- solution ----------------------------------------------------------------
    def _linear_theta_solve(self, lam: float) -> np.ndarray:
        """Solve the mode equation for theta at frozen lambda (it is linear).

        Assembles only the theta block; the root row is left out because it is
        undefined at the zero initial state (the Dirichlet lift integrates to
        zero for P2 vertex functions).
        """
        x = np.zeros(self.system.n_reduced)
        x[-1] = lam
        t_full, _ = self.system.expand(x)
        t_e = t_full[self.V.cell_dofs]
        r_t, _, _ = self._volume(self._w, self._dN2, t_e, self.u_e, lam)
        r_full = np.zeros(self.V.n_dofs)
        np.add.at(r_full, self.V.cell_dofs, r_t)
        r = self.system.reduce_residual([r_full], np.array([0.0]))
        rows_t = self.V.cell_dofs
        coo = BlockCOO((self.system.n_full, self.system.n_full))
        for l in range(6):
            d_rt, _, _ = self._volume(
                self._w, self._dN2, cs_perturb_state(t_e, (l,)), self.u_e, lam
            )
            coo.add(rows_t, rows_t[:, l][:, None], d_rt.imag / CS_H)
        jac = self.system.reduce_matrix(coo.tocsr()).tocsr()
        x[:-1] = Factorization(jac[:-1, :-1]).solve(-r[:-1])
        return x

    def solve(self, options: Optional[NewtonOptions] = None) -> ThermalState:
        lam = 0.0
        x = self._linear_theta_solve(lam)
        for _ in range(8):
            t_full, _ = self.system.expand(x)
            lam_new = float(lambda_root(self.averages(t_full)))
            if abs(lam_new - lam) <= 0.02 * max(abs(lam_new), 1e-12):
                lam = lam_new
                break
            lam = lam_new
            x = self._linear_theta_solve(lam)
        x[-1] = lam
        result = newton_solve(self.residual_reduced, self.jacobian_reduced, x, options)
        return self.state_from_reduced(result.x, result)

    def state_from_reduced(self, x_red: np.ndarray, newton=None) -> ThermalState:
        t_full, scal = self.system.expand(x_red)
        av = self.averages(t_full)
        lam = float(scal[0])
        if lam > 1e-6 / max(self.mesh.extent):
            raise NonDecayingError(f"decay rate lambda = {lam:.3e} 1/m is positive")
        return ThermalState(
            model=self,
            red=np.array(x_red),
            theta=t_full,
            lam=lam,
            averages=av,
            theta_max=float(np.max(t_full)),
            newton=newton,
        )


def solve_energy(
    mesh: TriMesh,
    flow: FlowState,
    props: FluidProperties,
    options: Optional[NewtonOptions] = None,
) -> ThermalState:
    """Solve the coupled (theta, lambda) system on the mesh of a converged flow."""
    if flow.mesh is not mesh:
        raise DegenerateThermalState("flow state was computed on a different mesh")
    return EnergyModel(flow, props).solve(options)


def interfacial_flux_average(theta: np.ndarray, mesh: TriMesh) -> float:
    """(1/V_cell) closed-integral grad(theta).n_fs ds with n_fs into the fluid."""
    from .fem.spaces import P2Space

    V = P2Space(mesh)
    coords = mesh.nodes[mesh.triangles]
    x0, y0, x1, y1 = mesh.domain
    vcell = (x1 - x0) * (y1 - y0)
    total = 0.0
    for batch in edge_batches(mesh, mesh.boundary_tag == BoundaryTag.FIN):
        coords_e = coords[batch.parents]
        length, n_fs = batch.geometry(coords_e)
        _, invJT = tri_geometry(coords_e)
        t_e = theta[V.cell_dofs[batch.parents]]
        dN = np.einsum("nde,lqe->nlqd", invJT, batch.grads_p2)
        gt = np.einsum("nlqd,nl->nqd", dN, t_e)
        flux_q = np.einsum("nqd,nd->nq", gt, n_fs)
        total += float((length * (flux_q @ batch.qw)).sum())
    return total / vcell
