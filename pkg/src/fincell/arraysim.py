"""Full-array channel simulation for verifying unit-cell heat estimates.

The finned region is meshed as one laterally periodic channel: an upstream
buffer, n_x fin cells of pitch l_x, and a downstream buffer. Flow enters
through the left plane under a prescribed pressure drop (or a matched inlet
velocity) and leaves through a traction-free right plane; the energy
equation is then solved with isothermal fins. The result carries per-fin
heat rates, outlet bulk temperature, effectiveness and the streamwise cell
profile of the fluid temperature. ``fit_decay`` extracts the exponential
envelope of that profile, and ``error_decomposition`` splits the mismatch
between the array heat rate and the unit-cell estimate into an entrance
part and an amplitude part.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .energy import ThermalState
from .errors import FitError, NonConvergence, UsageError
from .fem.assembly import (
    CS_H,
    BlockCOO,
    cs_perturb_state,
    edge_batches,
    tri_geometry,
)
from .fem.linear import Factorization
from .fem.newton import NewtonOptions
from .fem.reference import TRI_QP, p1_basis, p2_basis
from .fem.spaces import FieldMap, SystemMap
from .flow import FlowModel, FlowState, FluidProperties
from .functionals import (
    ArrayLayout,
    ScaleFactors,
    per_fin_periodic_heat,
    q_unit_normalized,
    q_unit_scaled,
)
from .geometry import ChannelGeometry, polygon_area
from .meshing.generate import MeshParams, generate_channel_mesh
from .meshing.trimesh import BoundaryTag, TriMesh

__all__ = [
    "ArrayCase",
    "DNSResult",
    "DecayFit",
    "ErrorReport",
    "solve_array",
    "effectiveness",
    "fit_decay",
    "error_decomposition",
]

_P1B = p1_basis(TRI_QP)
_P2B = p2_basis(TRI_QP)


@dataclass(frozen=True)
class ArrayCase:
    """One finned-channel verification case.

    The fin polyline is given in unit-cell coordinates [0, l_x] x [0, l_y]
    and is replicated at every cell of the layout. Exactly one of `delta_p`
    (pressure drop between the channel ends, positive drives +x flow) and
    `u_in` (mean inlet velocity) selects the inflow mode. The buffers must
    jointly span at least one pitch so the traction planes sit away from
    the first and last fin.
    """

    layout: ArrayLayout
    fin: np.ndarray
    props: FluidProperties
    t_in: float
    t_s: float
    delta_p: Optional[float] = None
    u_in: Optional[float] = None
    buffer_up: float = 0.5e-3
    buffer_down: float = 0.5e-3

    def __post_init__(self):
        if self.layout.n_y != 1:
            raise UsageError("lateral images are periodic; use a layout with n_y = 1")
        if (self.delta_p is None) == (self.u_in is None):
            raise UsageError("exactly one of delta_p/u_in must be given")
        if self.delta_p is not None and self.delta_p < 0.0:
            raise UsageError("delta_p must be >= 0 (flow enters on the left)")
        if self.u_in is not None and self.u_in < 0.0:
            raise UsageError("u_in must be >= 0 (flow enters on the left)")
        if min(self.buffer_up, self.buffer_down) <= 0.0:
            raise UsageError("buffers must be positive")
        if self.buffer_up + self.buffer_down < self.layout.l_x * (1.0 - 1e-12):
            raise UsageError("combined buffers must span at least one pitch")
        fin = np.asarray(self.fin, dtype=float)
        if fin.ndim != 2 or fin.shape[1] != 2 or len(fin) < 3:
            raise UsageError("fin must be an (m >= 3, 2) closed polyline")
        object.__setattr__(self, "fin", fin)
        self.channel_geometry()  # validate fin placement early

    @property
    def length(self) -> float:
        return self.buffer_up + self.layout.n_x * self.layout.l_x + self.buffer_down

    @property
    def height(self) -> float:
        return self.layout.l_y

    def channel_geometry(self) -> ChannelGeometry:
        shift = np.array([self.buffer_up, 0.0])
        pitch = np.array([self.layout.l_x, 0.0])
        fins = tuple(self.fin + shift + i * pitch for i in range(self.layout.n_x))
        return ChannelGeometry(self.length, self.height, fins)


@dataclass
class DNSResult:
    """Converged array flow and temperature with the derived heat measures.

    `q_fins[i]` is the heat rate from the stream into the fin of cell i
    [W/m]; its sign follows t_in - t_s. `t_profile[i]` is the superficial
    cell average of the temperature (fluid integral over the full cell
    area). `energy_residual` compares `q_array` against the advected power
    m_dot c (t_in - t_out), relative to `q_array`.
    """

    case: ArrayCase
    mesh: TriMesh
    flow: FlowState
    temperature: np.ndarray
    q_array: float
    q_fins: np.ndarray
    mdot: float
    t_out: float
    t_profile: np.ndarray
    energy_residual: float

    @property
    def effectiveness(self) -> float:
        return effectiveness(self)


@dataclass(frozen=True)
class DecayFit:
    """Log-linear envelope fit of the streamwise temperature profile.

    `t0` is the envelope amplitude at the layout reference station and
    `t0b` the matching amplitude of the scaled (max-normalized) form,
    t0 * max(theta) / <theta>; it is NaN when no mode-shape information was
    supplied. `window` is the half-open cell-index range used by the fit.
    """

    t0: float
    t0b: float
    lam: float
    window: Tuple[int, int]
    r2: float


@dataclass
class ErrorReport:
    """Array heat rate against its periodic-envelope reconstructions.

    Raw columns only; the error percentages are recomputed from them on
    access so the report stays internally consistent. `q_unit` and
    `q_unit_scaled` use the frozen baseline amplitudes, the corrected
    values rescale them by the fitted amplitudes, and `q_periodic` sums
    the per-fin envelope heats at the fitted amplitude and decay rate.
    """

    q_array: float
    q_fins: np.ndarray
    q_periodic: float
    q_periodic_fins: np.ndarray
    q_unit: float
    q_corrected: float
    q_unit_scaled: float
    q_corrected_scaled: float
    t0: float
    t0_init: float
    t0b: float
    t0b_init: float
    lam_fit: float
    lam_unit: float

    @property
    def entrance_error(self) -> float:
        """|q_array - q_periodic| / q_array."""
        return abs(self.q_array - self.q_periodic) / abs(self.q_array)

    @property
    def t0_error(self) -> float:
        """|q_unit - q_corrected| / q_array for the normalized form."""
        return abs(self.q_unit - self.q_corrected) / abs(self.q_array)

    @property
    def t0b_error(self) -> float:
        """|q_unit - q_corrected| / q_array for the scaled form."""
        return abs(self.q_unit_scaled - self.q_corrected_scaled) / abs(self.q_array)


# -- flow --------------------------------------------------------------------


def _channel_flow(
    mesh: TriMesh,
    props: FluidProperties,
    delta_p: float,
    options: Optional[NewtonOptions],
    init: Optional[np.ndarray] = None,
) -> FlowState:
    """Channel flow under prescribed end tractions, ramping on hard cases."""

    def model_at(dp):
        traction = [(BoundaryTag.LEFT, float(dp)), (BoundaryTag.RIGHT, 0.0)]
        return FlowModel(mesh, props, traction=traction)

    model = model_at(delta_p)
    try:
        return model.solve(init, options)
    except NonConvergence:
        state_red = None
        for factor in (0.25, 0.5, 0.75, 1.0):
            result = model_at(factor * delta_p).solve(state_red, options)
            state_red = result.red
        return model.state_from_reduced(state_red)


def _match_inlet_velocity(
    mesh: TriMesh,
    props: FluidProperties,
    u_target: float,
    options: Optional[NewtonOptions],
    rtol: float = 1e-8,
    max_iter: int = 30,
) -> FlowState:
    """Secant iteration on delta_p until the mean inlet velocity matches."""
    if u_target == 0.0:
        return _channel_flow(mesh, props, 0.0, options)
    state = _channel_flow(mesh, props, 1.0, options)
    pts = [(1.0, float(state.mean_u[0]))]
    if pts[0][1] <= 0.0:
        raise NonConvergence("channel flow does not respond to the probe pressure drop", [pts])
    for _ in range(max_iter):
        dp, u = pts[-1]
        if abs(u - u_target) <= rtol * abs(u_target):
            return state
        if len(pts) == 1:
            dp_new = dp * u_target / u  # exact in the linear regime
        else:
            (d0, u0), (d1, u1) = pts[-2:]
            if u1 == u0:
                raise NonConvergence("inlet velocity stalled between pressure steps", pts)
            dp_new = d1 + (u_target - u1) * (d1 - d0) / (u1 - u0)
        if dp_new <= 0.0:
            dp_new = 0.5 * dp
        state = _channel_flow(mesh, props, dp_new, options, init=state.red)
        pts.append((dp_new, float(state.mean_u[0])))
    raise NonConvergence(
        f"inlet velocity matching did not reach {u_target:g} m/s in {max_iter} steps", pts
    )


# -- temperature ---------------------------------------------------------------


def _solve_temperature(mesh: TriMesh, flow: FlowState, case: ArrayCase) -> np.ndarray:
    """Steady advection-diffusion temperature with isothermal fins.

    Solved for the normalized excess (T - t_s)/(t_in - t_s): fins carry 0,
    inlet dofs where flow enters carry 1, the outlet is a natural
    (zero-diffusive-flux) outflow. Without any through-flow both open ends
    are held at the far-field value, which keeps the zero-flow limit well
    posed and fore/aft symmetric. Returns the full P2 temperature [K].
    """
    fm = flow.model
    V = fm.V
    dirichlet = {int(d): 0.0 for d in V.boundary_dofs(BoundaryTag.FIN)}
    inlet = V.boundary_dofs(BoundaryTag.LEFT)
    u_scale = float(np.max(np.abs(flow.u))) if flow.u.size else 0.0
    inflow = inlet[flow.u[inlet, 0] > 1e-9 * u_scale] if u_scale > 0.0 else inlet[:0]
    if len(inflow) == 0:
        for d in np.concatenate([inlet, V.boundary_dofs(BoundaryTag.RIGHT)]):
            dirichlet[int(d)] = 1.0
    else:
        for d in inflow:
            dirichlet[int(d)] = 1.0

    tmap = FieldMap(V, 1, dirichlet)
    system = SystemMap([tmap])
    w, dN2 = fm._w, fm._dN2
    u_e = flow.u[V.cell_dofs]
    uq = np.einsum("lq,nlc->nqc", _P2B, u_e)
    rho_c, k = case.props.rho * case.props.c, case.props.k

    def volume(t_e):
        gt = np.einsum("nlqd,nl->nqd", dN2, t_e)
        conv = rho_c * np.einsum("nqc,nqc->nq", uq, gt)
        r = np.einsum("nq,nq,lq->nl", w, conv, _P2B)
        return r + k * np.einsum("nq,nqd,nlqd->nl", w, gt, dN2)

    t_lift, _ = system.expand(np.zeros(system.n_reduced))
    t_e = t_lift[V.cell_dofs]
    r_full = np.zeros(V.n_dofs)
    np.add.at(r_full, V.cell_dofs, volume(t_e))
    r0 = system.reduce_residual([r_full], np.zeros(0))
    rows = V.cell_dofs
    coo = BlockCOO((system.n_full, system.n_full))
    for l in range(6):
        d_r = volume(cs_perturb_state(t_e, (l,)))
        coo.add(rows, rows[:, l][:, None], d_r.imag / CS_H)
    jac = system.reduce_matrix(coo.tocsr())
    phi_red = Factorization(jac).solve(-r0)
    phi_full, _ = system.expand(phi_red)
    return case.t_s + (case.t_in - case.t_s) * phi_full


# -- derived measures ----------------------------------------------------------


def _fin_flux_integrals(mesh: TriMesh, fm: FlowModel, t_full: np.ndarray, n_fins: int):
    """Per-fin integral of grad(T).n_fs over each fin surface."""
    out = np.zeros(n_fins)
    for batch in edge_batches(mesh, mesh.boundary_tag == BoundaryTag.FIN):
        coords_e = fm.coords[batch.parents]
        length, n_fs = batch.geometry(coords_e)
        _, invJT = tri_geometry(coords_e)
        dN = np.einsum("nde,lqe->nlqd", invJT, batch.grads_p2)
        gt = np.einsum("nlqd,nl->nqd", dN, t_full[fm.V.cell_dofs[batch.parents]])
        flux = length * (np.einsum("nqd,nd->nq", gt, n_fs) @ batch.qw)
        np.add.at(out, mesh.boundary_fin[batch.edge_ids], flux)
    return out


def _outlet_scan(mesh: TriMesh, fm: FlowModel, u_full: np.ndarray, t_full: np.ndarray):
    """Volumetric flux, bulk temperature and minimum normal velocity at the outlet."""
    vflux = 0.0
    adv = 0.0
    t_sum = 0.0
    l_sum = 0.0
    un_min = np.inf
    for batch in edge_batches(mesh, mesh.boundary_tag == BoundaryTag.RIGHT):
        coords_e = fm.coords[batch.parents]
        length, n_fluid = batch.geometry(coords_e)
        n_out = -n_fluid  # outward normal of the channel
        dofs = fm.V.cell_dofs[batch.parents]
        u_q = np.einsum("lq,nlc->nqc", batch.basis_p2, u_full[dofs])
        un = np.einsum("nqc,nc->nq", u_q, n_out)
        t_q = np.einsum("lq,nl->nq", batch.basis_p2, t_full[dofs])
        vflux += float(length @ (un @ batch.qw))
        adv += float(length @ ((un * t_q) @ batch.qw))
        t_sum += float(length @ (t_q @ batch.qw))
        l_sum += float(np.sum(length))
        un_min = min(un_min, float(np.min(un)))
    return vflux, adv, t_sum / l_sum, un_min


def _cell_profile(mesh: TriMesh, fm: FlowModel, t_full: np.ndarray, case: ArrayCase) -> np.ndarray:
    """Superficial cell average of T per fin cell, quadrature points binned by x."""
    x_q = np.einsum("lq,nl->nq", _P1B, fm.coords[:, :, 0])
    t_q = np.einsum("lq,nl->nq", _P2B, t_full[fm.V.cell_dofs])
    bins = np.floor((x_q - case.buffer_up) / case.layout.l_x).astype(int)
    ok = (bins >= 0) & (bins < case.layout.n_x)
    sums = np.zeros(case.layout.n_x)
    np.add.at(sums, bins[ok], (fm._w * t_q)[ok])
    return sums / (case.layout.l_x * case.layout.l_y)


# -- public operations -----------------------------------------------------------


def solve_array(
    case: ArrayCase,
    h_target: float = 7e-5,
    params: Optional[MeshParams] = None,
    options: Optional[NewtonOptions] = None,
) -> DNSResult:
    """Mesh and solve one full-array case.

    Flow first (prescribed pressure drop, or a secant match of the inlet
    velocity), then the linear temperature problem on the frozen velocity.
    Warns on reversed flow at the outlet and on an energy balance residual
    above 1 % when advection carries the heat.
    """
    mesh = generate_channel_mesh(case.channel_geometry(), h_target, params)
    if case.u_in is not None:
        flow = _match_inlet_velocity(mesh, case.props, case.u_in, options)
    else:
        flow = _channel_flow(mesh, case.props, case.delta_p, options)
    t_full = _solve_temperature(mesh, flow, case)
    fm = flow.model

    q_fins = case.props.k * _fin_flux_integrals(mesh, fm, t_full, case.layout.n_x)
    q_array = float(np.sum(q_fins))
    vflux, adv, t_plain, un_min = _outlet_scan(mesh, fm, flow.u, t_full)
    u_scale = float(np.max(np.abs(flow.u))) if flow.u.size else 0.0
    if un_min < -1e-8 * max(u_scale, 1e-30):
        warnings.warn(
            f"reversed flow at the outlet (min u.n = {un_min:.3e} m/s); "
            "consider a longer downstream buffer",
            RuntimeWarning,
            stacklevel=2,
        )
    if abs(vflux) > 1e-9 * u_scale * case.height:
        t_out = adv / vflux
    else:
        t_out = t_plain  # no through-flow: plain outlet average
    mdot = case.props.rho * vflux
    advected = mdot * case.props.c * (case.t_in - t_out)
    q_scale = max(abs(q_array), 1e-30)
    energy_residual = (q_array - advected) / q_scale
    adv_scale = abs(mdot) * case.props.c * abs(case.t_in - case.t_s)
    if abs(energy_residual) > 0.01 and adv_scale > 0.1 * q_scale:
        warnings.warn(
            f"array energy balance residual {energy_residual:.2%}",
            RuntimeWarning,
            stacklevel=2,
        )
    return DNSResult(
        case=case,
        mesh=mesh,
        flow=flow,
        temperature=t_full,
        q_array=q_array,
        q_fins=q_fins,
        mdot=mdot,
        t_out=float(t_out),
        t_profile=_cell_profile(mesh, fm, t_full, case),
        energy_residual=float(energy_residual),
    )


def effectiveness(result: DNSResult, case: Optional[ArrayCase] = None) -> float:
    """(t_out - t_in)/(t_s - t_in): 1 when the stream leaves at the fin temperature."""
    case = result.case if case is None else case
    if case.t_s == case.t_in:
        raise UsageError("effectiveness is undefined for t_s = t_in")
    return (result.t_out - case.t_in) / (case.t_s - case.t_in)


def fit_decay(
    result: DNSResult,
    layout: Optional[ArrayLayout] = None,
    theta_info=None,
    window: Optional[Tuple[int, int]] = None,
    min_r2: float = 0.99,
) -> DecayFit:
    """Least-squares exponential envelope of the cell temperature profile.

    Fits log(<T> - t_s) against the layout cell stations over the half-open
    `window` (default: seven cells ending one short of the outlet, skipping
    the entrance). `theta_info` supplies the mode-shape statistics for the
    scaled amplitude: a ThermalState, or a (theta_max, theta_avg) pair;
    without it `t0b` is NaN.
    """
    layout = result.case.layout if layout is None else layout
    n_x = layout.n_x
    if window is None:
        stop = n_x - 1
        window = (max(1, stop - 7), stop)
    start, stop = int(window[0]), int(window[1])
    if not 0 <= start < stop <= n_x:
        raise UsageError(f"fit window {window} outside cells 0..{n_x}")
    if stop - start < 4:
        raise UsageError(f"fit window {window} has fewer than 4 cells")
    excess = result.t_profile[start:stop] - result.case.t_s
    if np.any(excess <= 0.0):
        raise FitError("non-positive temperature excess inside the fit window")
    x = layout.x_centers[start:stop]
    y = np.log(excess)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0.0 else 1.0
    if r2 < min_r2:
        raise FitError(f"log-linear fit R^2 = {r2:.5f} below {min_r2}")
    t0 = float(np.exp(intercept))
    if theta_info is None:
        t0b = float("nan")
    else:
        if isinstance(theta_info, ThermalState):
            theta_max = theta_info.theta_max
            theta_avg = theta_info.averages.theta_avg
        else:
            theta_max, theta_avg = theta_info
        t0b = t0 * float(theta_max) / float(theta_avg)
    return DecayFit(t0=t0, t0b=t0b, lam=float(slope), window=(start, stop), r2=r2)


def error_decomposition(
    dns: DNSResult,
    fit: DecayFit,
    unit: ThermalState,
    baseline: DecayFit,
) -> ErrorReport:
    """Split the array/unit heat mismatch into entrance and amplitude parts.

    `unit` is the unit-cell mode of the same fin geometry; `baseline` the
    envelope fit of the initial-geometry array, whose amplitudes are the
    frozen scale of the unit estimates. The periodic contribution keeps the
    unit-cell mode shape but follows the fitted amplitude and decay rate.
    """
    case = dns.case
    layout, props = case.layout, case.props
    extent = unit.mesh.extent
    pitch = np.array([layout.l_x, layout.l_y])
    if np.any(np.abs(extent - pitch) > 1e-9 * np.max(pitch)):
        raise UsageError(
            f"unit-cell extent {extent} does not match the layout pitch {pitch}"
        )
    cell_area = layout.l_x * layout.l_y
    fin_area_unit = cell_area - unit.mesh.fluid_area()
    fin_area_case = abs(polygon_area(case.fin))
    if abs(fin_area_unit - fin_area_case) > 1e-3 * fin_area_case:
        raise UsageError(
            "unit-cell mode is for a different fin shape "
            f"(fin area {fin_area_unit:.6e} vs {fin_area_case:.6e} m^2)"
        )
    scale_init = ScaleFactors(T0=baseline.t0, T0b=baseline.t0b)
    scale_fit = ScaleFactors(T0=fit.t0, T0b=fit.t0b)
    q_unit = q_unit_normalized(unit.mesh, unit, layout, scale_init, props)
    q_unit_s = q_unit_scaled(unit.mesh, unit, layout, scale_init, props)
    q_periodic_fins = np.array(
        [
            per_fin_periodic_heat(unit, layout, scale_fit, props, i, lam=fit.lam)
            for i in range(layout.n_x)
        ]
    )
    return ErrorReport(
        q_array=dns.q_array,
        q_fins=dns.q_fins.copy(),
        q_periodic=float(np.sum(q_periodic_fins)),
        q_periodic_fins=q_periodic_fins,
        q_unit=q_unit,
        q_corrected=q_unit * (fit.t0 / baseline.t0),
        q_unit_scaled=q_unit_s,
        q_corrected_scaled=q_unit_s * (fit.t0b / baseline.t0b),
        t0=fit.t0,
        t0_init=baseline.t0,
        t0b=fit.t0b,
        t0b_init=baseline.t0b,
        lam_fit=fit.lam,
        lam_unit=unit.lam,
    )
