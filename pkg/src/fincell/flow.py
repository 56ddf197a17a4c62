"""Steady incompressible flow on periodic unit cells and fin-array channels.

The periodic cell solves for the velocity/pressure fluctuation (u, p*) of the
developed regime together with the mean driving gradient. `gradP` throughout
holds the rate of mean-pressure DROP along each axis (positive gradP.x drives
flow in +x), which is the sign convention used in all reports; the pressure
reconstruction is P(x) = p*(x) - gradP . (x - x_c).

Driving conditions: either gradP.x is imposed (FixedGradient) or the
superficial mean velocity <u_x> is imposed (FixedVelocity). Both gradient
components are always kept as bordered scalar unknowns; the transverse one
enforces <u_y> = 0, which asymmetric fins require.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonConvergence, UsageError
from .fem.assembly import (
    CS_H,
    BlockCOO,
    cs_perturb_coords,
    cs_perturb_state,
    edge_batches,
    geom_tables,
    tri_geometry,
)
from .fem.newton import NewtonOptions, NewtonResult, newton_solve
from .fem.reference import TRI_QP, TRI_QW, p1_basis, p2_basis
from .fem.spaces import FieldMap, P1Space, P2Space, SystemMap
from .meshing.trimesh import BoundaryTag, TriMesh

__all__ = [
    "FluidProperties",
    "FlowDrive",
    "FlowModel",
    "FlowState",
    "solve_flow",
    "cell_average",
    "reynolds",
    "fin_drag",
]

_P2B = p2_basis(TRI_QP)  # (6, nq)
_P1B = p1_basis(TRI_QP)  # (3, nq)


@dataclass(frozen=True)
class FluidProperties:
    """Constant fluid properties (SI units)."""

    rho: float
    mu: float
    c: float
    k: float

    def __post_init__(self):
        for name in ("rho", "mu", "c", "k"):
            if getattr(self, name) <= 0:
                raise UsageError(f"fluid property {name} must be positive")

    @property
    def nu(self) -> float:
        return self.mu / self.rho

    @property
    def alpha(self) -> float:
        return self.k / (self.rho * self.c)

    @property
    def prandtl(self) -> float:
        return self.nu / self.alpha


@dataclass(frozen=True)
class FlowDrive:
    """Driving condition of the periodic cell problem."""

    mode: str  # "gradient" or "velocity"
    value: float

    def __post_init__(self):
        if self.mode not in ("gradient", "velocity"):
            raise UsageError(f"unknown drive mode {self.mode!r}")

    @staticmethod
    def fixed_gradient(grad_px: float) -> "FlowDrive":
        """Impose the streamwise mean-pressure drop rate [Pa/m]."""
        return FlowDrive("gradient", float(grad_px))

    @staticmethod
    def fixed_velocity(u_fix: float) -> "FlowDrive":
        """Impose the superficial mean velocity <u_x> [m/s]."""
        return FlowDrive("velocity", float(u_fix))

    @property
    def is_velocity(self) -> bool:
        return self.mode == "velocity"

    def scaled(self, factor: float) -> "FlowDrive":
        return FlowDrive(self.mode, self.value * factor)


@dataclass
class FlowState:
    """Converged flow solution on one mesh."""

    model: "FlowModel"
    red: np.ndarray  # reduced unknown vector
    u: np.ndarray  # full velocity dofs, (n_p2, 2)
    p: np.ndarray  # full pressure dofs, (n_p1,)
    gradP: np.ndarray  # realized driving gradient (drop rate), (2,)
    mean_u: np.ndarray  # superficial average velocity, (2,)
    newton: Optional[NewtonResult] = None

    @property
    def mesh(self) -> TriMesh:
        return self.model.mesh


class FlowModel:
    """Discrete periodic (or channel) Navier-Stokes system.

    Taylor-Hood elements: velocity P2, pressure P1. With `drive` given the
    mesh must be periodic in x and y, one pressure dof is pinned, and two
    bordered scalars (gradP.x, gradP.y) are appended. With `traction` given
    (list of (tag, mean pressure level)) the inlet/outlet carry prescribed
    traction -p_bar n and no scalars are appended.
    """

    def __init__(
        self,
        mesh: TriMesh,
        props: FluidProperties,
        drive: Optional[FlowDrive] = None,
        traction: Optional[list] = None,
    ):
        if (drive is None) == (traction is None):
            raise UsageError("exactly one of drive/traction must be given")
        self.mesh = mesh
        self.props = props
        self.drive = drive
        self.traction = traction
        self.V = P2Space(mesh)
        self.Q = P1Space(mesh)
        x0, y0, x1, y1 = mesh.domain
        self.cell_volume = (x1 - x0) * (y1 - y0)

        fin = self.V.boundary_dofs(BoundaryTag.FIN)
        u_dirichlet = {2 * int(d) + c: 0.0 for d in fin for c in (0, 1)}
        p_dirichlet = {}
        if drive is not None:
            if not (mesh.periodic_x and mesh.periodic_y):
                raise UsageError("periodic drive requires a doubly periodic mesh")
            p_dirichlet = {self.Q.alias[mesh.corner_node()]: 0.0}
        self.umap = FieldMap(self.V, 2, u_dirichlet)
        self.pmap = FieldMap(self.Q, 1, p_dirichlet)
        self.n_scalars = 2 if drive is not None else 0
        self.system = SystemMap([self.umap, self.pmap], self.n_scalars)

        self.coords = mesh.nodes[mesh.triangles]  # (nt, 3, 2)
        self._w, self._dN2 = geom_tables(self.coords)
        self._convection = 1.0
        self._p_offset = int(self.system.full_offsets[1])
        if traction is not None:
            tags = np.array([t for t, _ in traction])
            sel = np.isin(mesh.boundary_tag, tags)
            self._traction_batches = edge_batches(mesh, sel)
            self._traction_value = dict(traction)
        else:
            self._traction_batches = []
            self._traction_value = {}

    # -- indices of the bordered scalars in the reduced/full vectors
    @property
    def igx(self) -> int:
        if self.n_scalars == 0:
            raise UsageError("channel model has no gradient unknowns")
        return self.system.n_reduced - 2

    @property
    def igy(self) -> int:
        return self.system.n_reduced - 1

    # -- kernels ----------------------------------------------------------
    def _volume(self, w, dN2, u_e, p_e, g):
        """Element residual blocks of momentum/continuity plus cell velocity
        integrals; complex-safe in every argument."""
        rho, mu = self.props.rho, self.props.mu
        uq = np.einsum("lq,nlc->nqc", _P2B, u_e)
        gu = np.einsum("nlqd,nlc->nqcd", dN2, u_e)
        pq = np.einsum("lq,nl->nq", _P1B, p_e)
        strain = gu + np.swapaxes(gu, 2, 3)
        r_u = mu * np.einsum("nq,nqcd,nlqd->nlc", w, strain, dN2)
        if self._convection:
            conv = rho * self._convection * np.einsum("nqd,nqcd->nqc", uq, gu)
            r_u = r_u + np.einsum("nq,nqc,lq->nlc", w, conv, _P2B)
        r_u = r_u - np.einsum("nq,nq,nlqc->nlc", w, pq, dN2)
        if g is not None:
            r_u = r_u - np.einsum("nq,lq,c->nlc", w, _P2B, np.asarray(g))
        div_u = gu[:, :, 0, 0] + gu[:, :, 1, 1]
        r_p = np.einsum("nq,nq,lq->nl", w, div_u, _P1B)
        cell_int_u = np.einsum("nq,nqc->nc", w, uq)
        return r_u, r_p, cell_int_u

    def _traction_residual(self, r_u_full):
        for batch in self._traction_batches:
            coords_e = self.coords[batch.parents]
            length, n_fluid = batch.geometry(coords_e)
            p_bar = np.array(
                [self._traction_value[int(t)] for t in self.mesh.boundary_tag[batch.edge_ids]]
            )
            # prescribed traction -p_bar * n_out adds +p_bar (n_out . v) ds
            edge_mass = batch.qw @ batch.basis_p2.T  # (6,)
            vals = (p_bar * length)[:, None, None] * edge_mass[None, :, None] * (
                -n_fluid[:, None, :]
            )
            dofs = self.V.cell_dofs[batch.parents]
            np.add.at(r_u_full, dofs, vals)

    def _scalar_rows(self, cell_int_u, g):
        if self.n_scalars == 0:
            return np.zeros(0)
        mean_u = cell_int_u.sum(axis=0) / self.cell_volume
        if self.drive.is_velocity:
            row_x = mean_u[0] - self.drive.value
        else:
            row_x = g[0] - self.drive.value
        return np.array([row_x, mean_u[1]])

    # -- residual / jacobian ----------------------------------------------
    def _split(self, x_red):
        u_full, p_full, scal = self.system.expand(x_red)
        return u_full, p_full, scal

    def residual_reduced(self, x_red: np.ndarray) -> np.ndarray:
        u_full, p_full, scal = self._split(x_red)
        u_e = u_full[self.V.cell_dofs]
        p_e = p_full[self.Q.cell_dofs]
        g = scal if self.n_scalars else None
        r_u, r_p, ci = self._volume(self._w, self._dN2, u_e, p_e, g)
        r_u_full = np.zeros((self.V.n_dofs, 2))
        r_p_full = np.zeros(self.Q.n_dofs)
        np.add.at(r_u_full, self.V.cell_dofs, r_u)
        np.add.at(r_p_full, self.Q.cell_dofs, r_p)
        self._traction_residual(r_u_full)
        rows = self._scalar_rows(ci, g)
        return self.system.reduce_residual([r_u_full, r_p_full], rows)

    def jacobian_reduced(self, x_red: np.ndarray):
        u_full, p_full, scal = self._split(x_red)
        u_e = u_full[self.V.cell_dofs]
        p_e = p_full[self.Q.cell_dofs]
        g = scal if self.n_scalars else None
        n_full = self.system.n_full
        coo = BlockCOO((n_full, n_full))
        udofs = self.V.cell_dofs
        rows_u = 2 * udofs[:, :, None] + np.arange(2)[None, None, :]  # (nt,6,2)
        rows_p = self._p_offset + self.Q.cell_dofs  # (nt,3)
        row_gx = n_full - 2
        row_gy = n_full - 1
        vcell = self.cell_volume

        def add_state_blocks(col, d_ru, d_rp, d_ci):
            coo.add(rows_u, col[:, None, None], d_ru)
            coo.add(rows_p, col[:, None], d_rp)
            if self.n_scalars:
                if self.drive.is_velocity:
                    coo.add(np.full_like(col, row_gx), col, d_ci[:, 0] / vcell)
                coo.add(np.full_like(col, row_gy), col, d_ci[:, 1] / vcell)

        for l in range(6):
            for c in range(2):
                r_u, r_p, ci = self._volume(
                    self._w, self._dN2, cs_perturb_state(u_e, (l, c)), p_e, g
                )
                add_state_blocks(
                    2 * udofs[:, l] + c, r_u.imag / CS_H, r_p.imag / CS_H, ci.imag / CS_H
                )
        for l in range(3):
            r_u, _, _ = self._volume(
                self._w, self._dN2, u_e, cs_perturb_state(p_e, (l,)), g
            )
            col = self._p_offset + self.Q.cell_dofs[:, l]
            coo.add(rows_u, col[:, None, None], r_u.imag / CS_H)
        if self.n_scalars:
            # gradient columns: -integral(g . v) is linear with constant slope
            mass = np.einsum("nq,lq->nl", self._w, _P2B)  # (nt, 6)
            for c, col in ((0, n_full - 2), (1, n_full - 1)):
                coo.add(rows_u[:, :, c], np.full(rows_u[:, :, c].shape, col), -mass)
            if not self.drive.is_velocity:
                coo.add(np.array([row_gx]), np.array([n_full - 2]), np.array([1.0]))
        return self.system.reduce_matrix(coo.tocsr())

    # -- geometric derivatives --------------------------------------------
    def _gather_adjoint(self, psi_red):
        psi_full = self.system.C @ psi_red
        nu = self.umap.n_full
        npfl = self.pmap.n_full
        psi_u = psi_full[:nu].reshape(-1, 2)
        psi_p = psi_full[nu : nu + npfl]
        psi_s = psi_full[nu + npfl :]
        return psi_u, psi_p, psi_s

    def geometric_product(self, x_red: np.ndarray, psi_red: np.ndarray) -> np.ndarray:
        """psi^T dR/dX as a nodal field over mesh vertices, shape (n_nodes, 2).

        Traction edges are assumed geometrically fixed (channel inlet/outlet
        never deform), so only volume terms contribute.
        """
        u_full, p_full, scal = self._split(x_red)
        u_e = u_full[self.V.cell_dofs]
        p_e = p_full[self.Q.cell_dofs]
        g = scal if self.n_scalars else None
        psi_u, psi_p, psi_s = self._gather_adjoint(psi_red)
        psi_u_e = psi_u[self.V.cell_dofs]
        psi_p_e = psi_p[self.Q.cell_dofs]
        out = np.zeros((self.mesh.n_nodes, 2))
        tris = self.mesh.triangles
        for v in range(3):
            for c in range(2):
                w, dN2 = geom_tables(cs_perturb_coords(self.coords, v, c))
                r_u, r_p, ci = self._volume(w, dN2, u_e, p_e, g)
                contrib = (
                    np.einsum("nlc,nlc->n", psi_u_e, r_u.imag)
                    + np.einsum("nl,nl->n", psi_p_e, r_p.imag)
                ) / CS_H
                if self.n_scalars:
                    if self.drive.is_velocity:
                        contrib += psi_s[0] * ci[:, 0].imag / (CS_H * self.cell_volume)
                    contrib += psi_s[1] * ci[:, 1].imag / (CS_H * self.cell_volume)
                np.add.at(out[:, c], tris[:, v], contrib)
        return out

    def geometric_tangent(self, x_red: np.ndarray, dX: np.ndarray) -> np.ndarray:
        """Directional derivative (dR/dX) dX of the reduced residual."""
        u_full, p_full, scal = self._split(x_red)
        u_e = u_full[self.V.cell_dofs]
        p_e = p_full[self.Q.cell_dofs]
        g = scal if self.n_scalars else None
        tris = self.mesh.triangles
        dr_u_full = np.zeros((self.V.n_dofs, 2))
        dr_p_full = np.zeros(self.Q.n_dofs)
        drows = np.zeros(self.n_scalars)
        for v in range(3):
            for c in range(2):
                weight = dX[tris[:, v], c]
                if not np.any(weight):
                    continue
                w, dN2 = geom_tables(cs_perturb_coords(self.coords, v, c))
                r_u, r_p, ci = self._volume(w, dN2, u_e, p_e, g)
                np.add.at(dr_u_full, self.V.cell_dofs, weight[:, None, None] * r_u.imag / CS_H)
                np.add.at(dr_p_full, self.Q.cell_dofs, weight[:, None] * r_p.imag / CS_H)
                if self.n_scalars:
                    if self.drive.is_velocity:
                        drows[0] += weight @ ci[:, 0].imag / (CS_H * self.cell_volume)
                    drows[1] += weight @ ci[:, 1].imag / (CS_H * self.cell_volume)
        return self.system.reduce_residual([dr_u_full, dr_p_full], drows)

    # -- solution drivers ---------------------------------------------------
    def stokes_init(self) -> np.ndarray:
        from .fem.linear import Factorization

        self._convection = 0.0
        try:
            x0 = np.zeros(self.system.n_reduced)
            r0 = self.residual_reduced(x0)
            x = Factorization(self.jacobian_reduced(x0)).solve(-r0)
        finally:
            self._convection = 1.0
        return x

    def solve(self, init: Optional[np.ndarray] = None, options: Optional[NewtonOptions] = None) -> FlowState:
        x0 = self.stokes_init() if init is None else init
        result = newton_solve(self.residual_reduced, self.jacobian_reduced, x0, options)
        return self.state_from_reduced(result.x, result)

    def state_from_reduced(self, x_red: np.ndarray, newton=None) -> FlowState:
        u_full, p_full, scal = self._split(x_red)
        u_e = u_full[self.V.cell_dofs]
        ci = np.einsum("nq,lq,nlc->nc", self._w, _P2B, u_e)
        mean_u = ci.sum(axis=0) / self.cell_volume
        gradP = scal.copy() if self.n_scalars else np.zeros(2)
        return FlowState(
            model=self,
            red=np.array(x_red),
            u=u_full,
            p=p_full,
            gradP=gradP,
            mean_u=mean_u,
            newton=newton,
        )


def solve_flow(
    mesh: TriMesh,
    props: FluidProperties,
    drive: FlowDrive,
    init: Optional[FlowState] = None,
    options: Optional[NewtonOptions] = None,
) -> FlowState:
    """Solve the periodic cell flow problem, ramping the drive on hard cases."""
    model = FlowModel(mesh, props, drive=drive)
    if init is not None and init.red.shape == (model.system.n_reduced,):
        try:
            return model.solve(init.red, options)
        except NonConvergence:
            pass  # fall through to cold start
    try:
        return model.solve(None, options)
    except NonConvergence:
        state_red = None
        for factor in (0.25, 0.5, 0.75, 1.0):
            part = FlowModel(mesh, props, drive=drive.scaled(factor))
            result = part.solve(state_red, options)
            state_red = result.red
        return model.state_from_reduced(state_red)


def cell_average(mesh: TriMesh, values: np.ndarray) -> float | np.ndarray:
    """Superficial average: (1/V_cell) integral over the fluid domain.

    `values` holds nodal dofs of a P1 or P2 field (scalar or per-component
    columns), detected by length.
    """
    values = np.asarray(values)
    det, _ = tri_geometry(mesh.nodes[mesh.triangles])
    w = TRI_QW[None, :] * det[:, None]
    if len(values) == mesh.n_nodes:
        basis, space_dofs = _P1B, mesh.triangles
    else:
        V = P2Space(mesh)
        if len(values) != V.n_dofs:
            raise UsageError("field length matches neither P1 nor P2 dof count")
        basis, space_dofs = _P2B, V.cell_dofs
    x0, y0, x1, y1 = mesh.domain
    vcell = (x1 - x0) * (y1 - y0)
    elem = values[space_dofs]
    if elem.ndim == 2:
        total = np.einsum("nq,lq,nl->", w, basis, elem)
        return float(total) / vcell
    total = np.einsum("nq,lq,nlc->c", w, basis, elem)
    return total / vcell


def reynolds(state: FlowState, props: FluidProperties, l_y: float) -> float:
    """Re = <u_x> l_y / nu."""
    return float(state.mean_u[0]) * l_y / props.nu


def fin_drag(state: FlowState) -> np.ndarray:
    """Total force per unit depth exerted by the fluid on the fins, (2,).

    Integrates the full traction (periodic fluctuation pressure plus the
    reconstructed mean-pressure ramp plus viscous stress) over the fin
    surface. In a converged periodic state this equals V_cell * gradP along x.
    """
    model = state.model
    mesh = model.mesh
    mu = model.props.mu
    x0, y0, x1, y1 = mesh.domain
    xc = np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1)])
    force = np.zeros(2)
    det, invJT = tri_geometry(model.coords)
    for batch in edge_batches(mesh, mesh.boundary_tag == BoundaryTag.FIN):
        coords_e = model.coords[batch.parents]
        length, n_fs = batch.geometry(coords_e)
        qp = batch.qp_coords(coords_e)  # (ne, nq, 2)
        u_e = state.u[model.V.cell_dofs[batch.parents]]
        p_e = state.p[mesh.triangles[batch.parents]]
        dN = np.einsum("nde,lqe->nlqd", invJT[batch.parents], batch.grads_p2)
        gu = np.einsum("nlqd,nlc->nqcd", dN, u_e)
        strain = gu + np.swapaxes(gu, 2, 3)
        p_star = np.einsum("lq,nl->nq", batch.basis_p1, p_e)
        p_mean = -np.einsum("nqd,d->nq", qp - xc, state.gradP)
        p_tot = p_star + p_mean
        # traction on the solid across a surface whose normal n_fs points
        # into the fluid: t = -p n_fs + mu S n_fs
        t = -p_tot[:, :, None] * n_fs[:, None, :] + mu * np.einsum(
            "nqcd,nd->nqc", strain, n_fs
        )
        force += np.einsum("q,nqc,n->c", batch.qw, t, length)
    return force
