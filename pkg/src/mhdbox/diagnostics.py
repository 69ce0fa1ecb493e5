"""Energy and entropy functionals for weak-solution verification.

Evaluates, on simulation histories, the integral quantities whose balances
characterize weak solutions of the boundary-driven compressible MHD system:
total energy, the magnetic ballistic energy

    E_BM = 1/2 rho |u|^2 + rho e + 1/2 |B|^2 - theta_tilde rho s - B_B . B,

the entropy inequality residual against non-negative interior test
functions, weak-form residuals of the continuity (plain and renormalized),
momentum and induction equations, the relative (Bregman) energy with respect
to smooth comparison fields, and the essential/residual decomposition of
state space around a reference range.

Space quadrature is the cell average (face quantities averaged to centers);
time quadrature over a sampled history is the interval midpoint evaluated as
the average of the two endpoint samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from mhdbox import thermo
from mhdbox import transport as transport_mod
from mhdbox.grid import (
    BoundarySpec,
    BoxGrid,
    FieldState,
    apply_boundaries,
    _neumann_pad,
    _pad_cell_like,
    _padded_coords,
    _wall_meshes,
)
from mhdbox.solver import (
    cell_bfield,
    cell_current,
    cell_grad_theta,
    cell_velocity,
    cell_velocity_gradient,
)

__all__ = [
    "EnergyReport",
    "EssResSplit",
    "total_energy",
    "total_entropy",
    "ballistic_energy",
    "ballistic_balance_residual",
    "entropy_inequality_residual",
    "weak_form_residuals",
    "relative_energy",
    "relative_energy_density",
    "ess_res_split",
    "harmonic_extension",
    "TestField",
    "energy_report_row",
    "ENERGY_REPORT_COLUMNS",
]


ENERGY_REPORT_COLUMNS = [
    "t",
    "total_energy",
    "ballistic_energy",
    "entropy_total",
    "entropy_production_integral",
    "ballistic_residual",
    "divB_max",
    "boundary_heat_flux",
    "boundary_poynting_flux",
]


@dataclass
class EnergyReport:
    t: float
    total_energy: float
    ballistic_energy: float
    entropy_total: float
    entropy_production_integral: float
    ballistic_residual: float
    divB_max: float
    boundary_heat_flux: float
    boundary_poynting_flux: float


@dataclass
class EssResSplit:
    """Partition of cells into the essential range box and its complement."""

    ess_mask: np.ndarray
    bounds: tuple[float, float, float, float]  # rho_lo, rho_hi, theta_lo, theta_hi

    @property
    def res_mask(self) -> np.ndarray:
        return ~self.ess_mask


def _avg(a: np.ndarray, axis: int) -> np.ndarray:
    sl0 = [slice(None)] * a.ndim
    sl1 = [slice(None)] * a.ndim
    sl0[axis] = slice(None, -1)
    sl1[axis] = slice(1, None)
    return 0.5 * (a[tuple(sl0)] + a[tuple(sl1)])


def _sq_avg(a: np.ndarray, axis: int) -> np.ndarray:
    sl0 = [slice(None)] * a.ndim
    sl1 = [slice(None)] * a.ndim
    sl0[axis] = slice(None, -1)
    sl1[axis] = slice(1, None)
    return 0.5 * (a[tuple(sl0)] ** 2 + a[tuple(sl1)] ** 2)


def kinetic_energy_density(state: FieldState) -> np.ndarray:
    """1/2 rho |u|^2 at cells (face squares averaged, hence non-negative)."""
    u2 = _sq_avg(state.ux, 0) + _sq_avg(state.uy, 1) + _sq_avg(state.uz, 2)
    return 0.5 * state.rho * u2


def magnetic_energy_density(state: FieldState) -> np.ndarray:
    b2 = _sq_avg(state.bx, 0) + _sq_avg(state.by, 1) + _sq_avg(state.bz, 2)
    return 0.5 * b2


def total_energy(state: FieldState, gas: thermo.GasModel) -> float:
    """Integral of 1/2 rho|u|^2 + rho e + 1/2 |B|^2 over the box."""
    pt = thermo.eos_eval(gas, state.rho, state.theta)
    dens = kinetic_energy_density(state) + state.rho * pt.e + magnetic_energy_density(state)
    return float(np.sum(dens) * state.grid.cell_volume)


def total_entropy(state: FieldState, gas: thermo.GasModel) -> float:
    pt = thermo.eos_eval(gas, state.rho, state.theta)
    return float(np.sum(state.rho * pt.s) * state.grid.cell_volume)


def _bb_cells(state: FieldState, bc: BoundarySpec, t: float):
    """Background field dotted with B, averaged at cells."""
    g = state.grid
    bb = bc.bb_on_faces(g, t)
    dot = (_avg(bb[0] * state.bx, 0) + _avg(bb[1] * state.by, 1)
           + _avg(bb[2] * state.bz, 2))
    return dot


def ballistic_energy(state: FieldState, gas: thermo.GasModel, theta_tilde,
                     bc: Optional[BoundarySpec] = None, t: Optional[float] = None) -> float:
    """Integral of the ballistic energy density with extension theta_tilde.

    ``theta_tilde`` is a positive cell field (or scalar) matching the
    boundary temperature on the walls; ``bc`` supplies the background field
    snapshot (omitted or zero -> no magnetic coupling term).
    """
    th_t = np.broadcast_to(np.asarray(theta_tilde, dtype=float), state.grid.cell_shape())
    if np.any(th_t <= 0.0):
        raise thermo.ThermoDomainError("theta_tilde must be positive")
    pt = thermo.eos_eval(gas, state.rho, state.theta)
    dens = (kinetic_energy_density(state) + state.rho * pt.e
            + magnetic_energy_density(state) - th_t * state.rho * pt.s)
    if bc is not None:
        dens = dens - _bb_cells(state, bc, state.t if t is None else t)
    return float(np.sum(dens) * state.grid.cell_volume)


def entropy_production_cells(state: FieldState, tr: transport_mod.TransportModel) -> np.ndarray:
    """Pointwise entropy production rate at cells of a boundaries-applied state."""
    G = cell_velocity_gradient(state)
    J = cell_current(state)
    gth = cell_grad_theta(state)
    return transport_mod.entropy_production_density(tr, state.theta, G, gth, J)


def dissipation_entropy_weighted(state: FieldState, tr: transport_mod.TransportModel,
                                 weight: np.ndarray) -> float:
    """Integral of weight/theta * (S:grad u - q.grad theta/theta + zeta|curl B|^2)."""
    G = cell_velocity_gradient(state)
    J = cell_current(state)
    gth = cell_grad_theta(state)
    visc = transport_mod.shear_dissipation(tr, state.theta, G)
    cond = tr.kappa(state.theta) * np.sum(gth * gth, axis=-1) / state.theta
    joule = tr.zeta(state.theta) * np.sum(J * J, axis=-1)
    dens = weight / state.theta * (visc + cond + joule)
    return float(np.sum(dens) * state.grid.cell_volume)


def boundary_heat_flux(state: FieldState, tr: transport_mod.TransportModel) -> float:
    """Net outward Fourier flux through the walls (positive = heat leaving)."""
    g = state.grid
    tp = state.ghosts.theta_p
    total = 0.0
    areas = (g.hy * g.hz, g.hx * g.hz, g.hx * g.hy)
    slices = [(tp[:, 1:-1, 1:-1], 0), (tp[1:-1, :, 1:-1], 1), (tp[1:-1, 1:-1, :], 2)]
    for (arr, ax), area in zip(slices, areas):
        if g.periodic[ax]:
            continue
        d = np.diff(arr, axis=ax) / g.h[ax]
        thf = _avg(arr, ax)
        q = -(tr.kappa(thf)) * d
        q_lo = np.take(q, [0], axis=ax)
        q_hi = np.take(q, [-1], axis=ax)
        # outward = -q.n at the low wall, +q.n at the high wall
        total += float((q_hi.sum() - q_lo.sum()) * area)
    return total


def boundary_poynting_flux(state: FieldState, tr: transport_mod.TransportModel) -> float:
    """Net outward magnetic energy flux (E x B).n through the walls.

    Report-grade quadrature: E = B x u + zeta curl B is collocated at cell
    centers and sampled on the outermost cell layer of each wall (O(h)
    offset from the wall plane).
    """
    g = state.grid
    u_c = cell_velocity(state)
    b_c = cell_bfield(state)
    J = cell_current(state)
    E = np.cross(b_c, u_c, axis=-1) + tr.zeta(state.theta)[..., None] * J
    S = np.cross(E, b_c, axis=-1)
    areas = (g.hy * g.hz, g.hx * g.hz, g.hx * g.hy)
    total = 0.0
    for ax in range(3):
        if g.periodic[ax]:
            continue
        s_n = S[..., ax]
        total += float((np.take(s_n, [-1], axis=ax).sum()
                        - np.take(s_n, [0], axis=ax).sum()) * areas[ax])
    return total


# -- theta_tilde extensions -----------------------------------------------------


def harmonic_extension(grid: BoxGrid, bc: BoundarySpec, t: float,
                       rtol: float = 1e-11, maxiter: int = 20000) -> np.ndarray:
    """Discrete harmonic extension of the boundary temperature trace.

    Solves lap(theta_tilde) = 0 with Dirichlet ghosts pinned to theta_B(t);
    for a constant trace the result is that constant (returned immediately).
    """
    ops = grid.ops()
    # constant trace short-circuit
    if not callable(bc.theta_b):
        return np.full(grid.cell_shape(), float(bc.theta_b))

    def pad_with_trace(arr, zero_trace: bool):
        p = arr
        coords_now = [grid.cell_coords(a) for a in range(3)]
        for ax in range(3):
            if grid.periodic[ax]:
                p = _pad_cell_like(p, ax, "mirror", periodic=True)
            elif zero_trace:
                p = _pad_cell_like(p, ax, "dirichlet", np.zeros(1), np.zeros(1))
            else:
                lo_mesh, hi_mesh = _wall_meshes(grid, coords_now, ax)
                p = _pad_cell_like(p, ax, "dirichlet",
                                   bc.theta_on(t, lo_mesh), bc.theta_on(t, hi_mesh))
            coords_now[ax] = _padded_coords(grid, ax, "cell")
        return p

    # lap(theta) = lin(theta) + c_aff = 0, i.e. (-lin) theta = c_aff with
    # -lin symmetric positive definite under the zero-trace ghosts
    x = np.full(grid.cell_shape(), 1.0)
    c_aff = ops.laplacian(pad_with_trace(np.zeros(grid.cell_shape()), False))
    b = c_aff.ravel()

    def matvec(v):
        return -ops.laplacian(pad_with_trace(v.reshape(grid.cell_shape()), True)).ravel()

    from mhdbox.solver import _cg
    sol = _cg(matvec, b, x.ravel(), rtol, maxiter)
    out = sol.reshape(grid.cell_shape())
    if np.any(out <= 0.0):
        raise thermo.ThermoDomainError("harmonic extension produced non-positive values")
    return out


# -- history-based balances --------------------------------------------------------


def _prepared(states: Sequence[FieldState], bc: BoundarySpec):
    """Yield boundaries-applied states one at a time (memory stays O(1))."""
    for s in states:
        yield s if s.ghosts is not None else apply_boundaries(s, bc, s.t)


def _stream_balance(states, bc, inner, bracket):
    """Trapezoid time integral of ``inner`` plus end brackets, streaming."""
    prev_val = None
    prev_t = None
    first_bracket = None
    last_bracket = None
    integral = 0.0
    count = 0
    for st in _prepared(states, bc):
        val = inner(st)
        if prev_val is not None:
            integral += 0.5 * (prev_val + val) * (st.t - prev_t)
        if first_bracket is None:
            first_bracket = bracket(st)
        last_bracket = bracket(st)
        prev_val, prev_t = val, st.t
        count += 1
    if count < 2:
        raise ValueError("history must hold at least two states")
    return integral, first_bracket, last_bracket


def ballistic_balance_residual(history: Sequence[FieldState], gas: thermo.GasModel,
                               tr: transport_mod.TransportModel, bc: BoundarySpec,
                               theta_tilde=None, dtheta_tilde_dt=None,
                               grad_theta_tilde=None) -> dict:
    """Discrete defect of the ballistic energy balance over the history.

    Returns LHS - RHS of the integral balance on [t0, tN]:

        [E_BM] + int (theta_tilde/theta) (S:grad u - q.grad theta/theta
                                           + zeta |curl B|^2)
        - ( -int rho s (d_t theta_tilde + u.grad theta_tilde)
              - int (q/theta).grad theta_tilde
            - int (B.d_t B_B - (B x u).curl B_B - zeta curl B.curl B_B)
            + int rho g.u )

    Exact weak solutions give <= 0 (equality for smooth flows); the
    discrete value carries the scheme error.  ``theta_tilde`` may be a cell
    field, scalar, or None (harmonic extension of the trace, cached per
    call); its derivatives default to zero (static extension).
    """
    if len(history) < 2:
        raise ValueError("history must hold at least two states")
    g = history[0].grid
    V = g.cell_volume

    if theta_tilde is None:
        th_t = harmonic_extension(g, bc, history[0].t)
    else:
        th_t = np.broadcast_to(np.asarray(theta_tilde, dtype=float), g.cell_shape()).copy()
    if np.any(th_t <= 0.0):
        raise thermo.ThermoDomainError("theta_tilde must be positive")
    # boundary-trace compatibility check at wall midpoints
    for ax in range(3):
        if g.periodic[ax]:
            continue
        coords = [g.cell_coords(a) for a in range(3)]
        lo_mesh, hi_mesh = _wall_meshes(g, coords, ax)
        tb_lo = bc.theta_on(history[0].t, lo_mesh)
        tb_hi = bc.theta_on(history[0].t, hi_mesh)
        th_lo = np.take(th_t, [0], axis=ax)
        th_hi = np.take(th_t, [-1], axis=ax)
        scale = float(np.max(np.abs(tb_lo))) + float(np.max(np.abs(tb_hi)))
        # the cell value sits h/2 inside; allow first-order slack
        tol = 0.75 * scale * max(g.h) + 1e-12
        if (np.max(np.abs(th_lo - tb_lo)) > tol or np.max(np.abs(th_hi - tb_hi)) > tol):
            raise ValueError("theta_tilde trace does not match the boundary temperature")

    def integrand(s: FieldState) -> np.ndarray:
        pt = thermo.eos_eval(gas, s.rho, s.theta)
        diss = dissipation_entropy_weighted(s, tr, th_t)
        u_c = cell_velocity(s)
        b_c = cell_bfield(s)
        gth = cell_grad_theta(s)
        q_c = -tr.kappa(s.theta)[..., None] * gth
        terms = 0.0
        if dtheta_tilde_dt is not None:
            dtt = np.broadcast_to(np.asarray(dtheta_tilde_dt(s.t)), g.cell_shape())
            terms += float(np.sum(s.rho * pt.s * dtt) * V)
        if grad_theta_tilde is not None:
            gtt = np.asarray(grad_theta_tilde(s.t))
            terms += float(np.sum(s.rho * pt.s * np.sum(u_c * gtt, axis=-1)) * V)
            terms += float(np.sum(np.sum(q_c * gtt, axis=-1) / s.theta) * V)
        # background-field coupling
        bcoup = 0.0
        if bc.dB_B_dt is not None:
            dbb = np.stack(
                [np.broadcast_to(c, g.cell_shape())
                 for c in _eval_vec3(bc.dB_B_dt, s.t, g)], axis=-1)
            bcoup += float(np.sum(np.sum(b_c * dbb, axis=-1)) * V)
        if bc.curl_B_B is not None:
            cbb = np.stack(
                [np.broadcast_to(c, g.cell_shape())
                 for c in _eval_vec3(bc.curl_B_B, s.t, g)], axis=-1)
            J = cell_current(s)
            bxu = np.cross(b_c, u_c, axis=-1)
            bcoup -= float(np.sum(np.sum(bxu * cbb, axis=-1)) * V)
            bcoup -= float(np.sum(tr.zeta(s.theta) * np.sum(J * cbb, axis=-1)) * V)
        gf = bc.g_on_faces(g, s.t)
        power = float(np.sum(
            s.rho * (_avg(gf[0] * s.ux, 0) + _avg(gf[1] * s.uy, 1) + _avg(gf[2] * s.uz, 2))) * V)
        return np.array([diss, -terms - bcoup + power])

    integrals, e0, e1 = _stream_balance(
        history, bc, integrand,
        lambda s: ballistic_energy(s, gas, th_t, bc, s.t))
    diss_int = float(integrals[0])
    rhs_int = float(integrals[1])

    residual = (e1 - e0) + diss_int - rhs_int
    return {
        "residual": residual,
        "positive_part": max(residual, 0.0),
        "energy_change": e1 - e0,
        "dissipation_integral": diss_int,
        "rhs_integral": rhs_int,
        "initial_ballistic": e0,
        "final_ballistic": e1,
    }


def _eval_vec3(fn, t, grid: BoxGrid):
    mesh = grid.cell_mesh()
    if callable(fn):
        return fn(t, *mesh)
    return fn


@dataclass
class TestField:
    """Space-time test function with analytic derivatives.

    ``value(t, X, Y, Z)`` returns scalar or component values; for vector
    fields it returns a 3-tuple.  Optional derivative callables supply
    d/dt, gradient (scalar: 3-tuple; vector: 3x3 nested tuple du_i/dx_j),
    divergence and curl as required by the individual weak forms.
    """

    value: Callable
    dt: Optional[Callable] = None
    grad: Optional[Callable] = None
    div: Optional[Callable] = None
    curl: Optional[Callable] = None
    kind: str = "scalar"  # scalar | vector | vector_divfree
    name: str = "phi"


def bump_test_field(grid: BoxGrid, margin: float = 0.15) -> TestField:
    """Smooth non-negative scalar bump vanishing near all walls."""

    def window(c, L):
        s = np.clip((c / L - margin) / (1.0 - 2.0 * margin), 0.0, 1.0)
        return np.sin(np.pi * s) ** 2

    def value(t, X, Y, Z):
        ex = grid.extents
        return window(X, ex[0]) * window(Y, ex[1]) * window(Z, ex[2])

    return TestField(value=value, dt=lambda t, X, Y, Z: 0.0 * X * Y * Z, kind="scalar",
                     name="bump")


def _cells_of(fn, t, grid):
    X, Y, Z = grid.cell_mesh()
    return np.broadcast_to(np.asarray(fn(t, X, Y, Z), dtype=float), grid.cell_shape())


def entropy_inequality_residual(history: Sequence[FieldState], gas: thermo.GasModel,
                                tr: transport_mod.TransportModel, bc: BoundarySpec,
                                test_fn: TestField) -> float:
    """RHS - LHS of the weak entropy inequality for a non-negative test function.

    Non-negative for exact weak solutions; approaches zero for smooth flows
    under refinement.  The test function must vanish near the walls.
    """
    g = history[0].grid
    V = g.cell_volume
    phi0 = _cells_of(test_fn.value, history[0].t, g)
    if np.any(phi0 < 0.0):
        raise ValueError("entropy test function must be non-negative")
    edge = 0.0
    for ax in range(3):
        if not g.periodic[ax]:
            edge = max(edge, float(np.max(np.abs(np.take(phi0, [0, -1], axis=ax)))))
    if edge > 1e-10 * (1.0 + float(np.max(phi0))):
        raise ValueError("entropy test function must vanish near the boundary")

    def transport_term(s: FieldState) -> float:
        phi = _cells_of(test_fn.value, s.t, g)
        pt = thermo.eos_eval(gas, s.rho, s.theta)
        u_c = cell_velocity(s)
        gth = cell_grad_theta(s)
        q_over_th = -(tr.kappa(s.theta) / s.theta)[..., None] * gth
        term = 0.0
        if test_fn.dt is not None:
            dphi = np.broadcast_to(np.asarray(test_fn.dt(s.t, *g.cell_mesh()), dtype=float),
                                   g.cell_shape())
            term += float(np.sum(s.rho * pt.s * dphi) * V)
        gphi = _grad_cells_of(test_fn, s.t, g)
        term += float(np.sum(s.rho * pt.s * np.sum(u_c * gphi, axis=-1)) * V)
        term += float(np.sum(np.sum(q_over_th * gphi, axis=-1)) * V)
        return term

    def production_term(s: FieldState) -> float:
        phi = _cells_of(test_fn.value, s.t, g)
        sigma = entropy_production_cells(s, tr)
        return float(np.sum(sigma * phi) * V)

    def entropy_weighted(s):
        phi = _cells_of(test_fn.value, s.t, g)
        pt = thermo.eos_eval(gas, s.rho, s.theta)
        return float(np.sum(s.rho * pt.s * phi) * V)

    integrals, b0, b1 = _stream_balance(
        history, bc,
        lambda s: np.array([transport_term(s), production_term(s)]),
        entropy_weighted)
    lhs = float(integrals[0])
    prod = float(integrals[1])
    return (b1 - b0) - prod - lhs


def _grad_cells_of(test_fn: TestField, t, grid: BoxGrid) -> np.ndarray:
    """Gradient of a scalar test field at cells (analytic or differenced)."""
    if test_fn.grad is not None:
        X, Y, Z = grid.cell_mesh()
        gx, gy, gz = test_fn.grad(t, X, Y, Z)
        out = np.stack([np.broadcast_to(np.asarray(c, dtype=float), grid.cell_shape())
                        for c in (gx, gy, gz)], axis=-1)
        return out
    phi = _cells_of(test_fn.value, t, grid)
    pp = _neumann_pad(grid, phi)
    out = np.zeros((*grid.cell_shape(), 3))
    for ax in range(3):
        sl = [slice(1, -1)] * 3
        sl[ax] = slice(None)
        arr = pp[tuple(sl)]
        d = np.diff(arr, axis=ax) / grid.h[ax]
        out[..., ax] = _avg_axis(d, ax)
    return out


def _avg_axis(a, axis):
    sl0 = [slice(None)] * a.ndim
    sl1 = [slice(None)] * a.ndim
    sl0[axis] = slice(None, -1)
    sl1[axis] = slice(1, None)
    return 0.5 * (a[tuple(sl0)] + a[tuple(sl1)])


def weak_form_residuals(history: Sequence[FieldState], gas: thermo.GasModel,
                        tr: transport_mod.TransportModel, bc: BoundarySpec,
                        tests: Sequence[TestField],
                        renorm: Optional[Callable] = None,
                        renorm_prime: Optional[Callable] = None,
                        forcing=None) -> dict:
    """Space-time residuals of the weak continuity / momentum / induction forms.

    Scalar test entries produce the plain and renormalized continuity
    residuals (default renormalization b(rho) = rho/(1+rho)); vector entries
    with phi.n = 0 on walls produce the momentum residual; divergence-free
    vector entries produce the induction residual.  Manufactured sources, if
    supplied, are subtracted so that exact solutions give zero residuals.
    """
    if renorm is None:
        renorm = lambda r: r / (1.0 + r)          # noqa: E731
        renorm_prime = lambda r: 1.0 / (1.0 + r) ** 2  # noqa: E731
    g = history[0].grid
    V = g.cell_volume
    out = {}

    for tf in tests:
        if tf.kind == "scalar":
            out[f"continuity[{tf.name}]"] = _continuity_residual(
                history, bc, g, V, tf, None, None, forcing)
            out[f"renormalized_continuity[{tf.name}]"] = _continuity_residual(
                history, bc, g, V, tf, renorm, renorm_prime, forcing)
        elif tf.kind == "vector":
            _check_vector_bc(tf, g, history[0].t)
            out[f"momentum[{tf.name}]"] = _momentum_residual(
                history, bc, g, V, gas, tr, tf, forcing)
        elif tf.kind == "vector_divfree":
            out[f"induction[{tf.name}]"] = _induction_residual(
                history, bc, g, V, tr, tf, forcing)
        else:
            raise ValueError(f"unknown test field kind {tf.kind}")
    return out


def _check_vector_bc(tf: TestField, g: BoxGrid, t: float) -> None:
    """Reject momentum test fields whose normal trace is non-zero on a wall."""
    comps = tf.value(t, *g.cell_mesh())
    scale = max(max(float(np.max(np.abs(np.asarray(c, dtype=float)))) for c in comps),
                1e-30)
    for ax in range(3):
        if g.periodic[ax]:
            continue
        coords = [g.cell_coords(a) for a in range(3)]
        lo_mesh, hi_mesh = _wall_meshes(g, coords, ax)
        for mesh in (lo_mesh, hi_mesh):
            comp = np.asarray(tf.value(t, *mesh)[ax], dtype=float)
            if np.max(np.abs(comp)) > 1e-12 * scale:
                raise ValueError(
                    f"momentum test field '{tf.name}' violates phi.n=0 on axis {ax}")


def _continuity_residual(history, bc, g, V, tf, b_fn, b_prime, forcing):
    def inner(s):
        phi = _cells_of(tf.value, s.t, g)
        gphi = _grad_cells_of(tf, s.t, g)
        u_c = cell_velocity(s)
        if b_fn is None:
            dens = s.rho
            extra = 0.0
        else:
            dens = b_fn(s.rho)
            from mhdbox.solver import _diff
            divu = (_diff(s.ux, 0, g.hx) + _diff(s.uy, 1, g.hy) + _diff(s.uz, 2, g.hz))
            extra = np.sum((b_fn(s.rho) - b_prime(s.rho) * s.rho) * divu * phi) * V
        term = 0.0
        if tf.dt is not None:
            dphi = np.broadcast_to(np.asarray(tf.dt(s.t, *g.cell_mesh()), dtype=float),
                                   g.cell_shape())
            term += float(np.sum(dens * dphi) * V)
        term += float(np.sum(dens * np.sum(u_c * gphi, axis=-1)) * V)
        term += float(extra)
        if forcing is not None and forcing.f_mass is not None and b_fn is None:
            term += float(np.sum(forcing.f_mass(s.t, g) * phi) * V)
        return term

    def bracket(s):
        phi = _cells_of(tf.value, s.t, g)
        dens = s.rho if b_fn is None else b_fn(s.rho)
        return float(np.sum(dens * phi) * V)

    integral, b0, b1 = _stream_balance(history, bc, inner, bracket)
    return integral - (b1 - b0)


def _vector_cells_of(tf, t, g):
    vals = tf.value(t, *g.cell_mesh())
    return np.stack([np.broadcast_to(np.asarray(c, dtype=float), g.cell_shape())
                     for c in vals], axis=-1)


def _vector_grad_cells_of(tf, t, g):
    rows = tf.grad(t, *g.cell_mesh())
    out = np.zeros((*g.cell_shape(), 3, 3))
    for i in range(3):
        for j in range(3):
            out[..., i, j] = np.broadcast_to(np.asarray(rows[i][j], dtype=float),
                                             g.cell_shape())
    return out


def _momentum_residual(history, bc, g, V, gas, tr, tf, forcing):
    def inner(s):
        phi = _vector_cells_of(tf, s.t, g)
        gphi = _vector_grad_cells_of(tf, s.t, g)
        divphi = np.trace(gphi, axis1=-2, axis2=-1)
        u_c = cell_velocity(s)
        b_c = cell_bfield(s)
        pt = thermo.eos_eval(gas, s.rho, s.theta)
        G = cell_velocity_gradient(s)
        S = transport_mod.viscous_stress(tr, s.theta, G)
        term = 0.0
        if tf.dt is not None:
            dphi_rows = tf.dt(s.t, *g.cell_mesh())
            dphi = np.stack([np.broadcast_to(np.asarray(c, dtype=float), g.cell_shape())
                             for c in dphi_rows], axis=-1)
            term += float(np.sum(s.rho * np.sum(u_c * dphi, axis=-1)) * V)
        uu = s.rho[..., None, None] * u_c[..., :, None] * u_c[..., None, :]
        term += float(np.sum(uu * gphi) * V)
        term += float(np.sum(pt.p * divphi) * V)
        term -= float(np.sum(S * gphi) * V)
        # Lorentz stress (B(x)B - |B|^2/2 I): curl B x B = div(T) enters the
        # residual as -T:grad(phi) for phi.n = 0
        maxwell = (b_c[..., :, None] * b_c[..., None, :]
                   - 0.5 * np.sum(b_c * b_c, axis=-1)[..., None, None] * np.eye(3))
        term -= float(np.sum(maxwell * gphi) * V)
        gf = bc.g_on_faces(g, s.t)
        g_c = np.stack([_avg(gf[0], 0), _avg(gf[1], 1), _avg(gf[2], 2)], axis=-1)
        term += float(np.sum(s.rho * np.sum(g_c * phi, axis=-1)) * V)
        if forcing is not None and forcing.f_mom is not None:
            fm = forcing.f_mom(s.t, g)
            fm_c = np.stack([_avg(fm[0], 0), _avg(fm[1], 1), _avg(fm[2], 2)], axis=-1)
            term += float(np.sum(np.sum(fm_c * phi, axis=-1)) * V)
        return term

    def bracket(s):
        phi = _vector_cells_of(tf, s.t, g)
        u_c = cell_velocity(s)
        return float(np.sum(s.rho * np.sum(u_c * phi, axis=-1)) * V)

    integral, b0, b1 = _stream_balance(history, bc, inner, bracket)
    return integral - (b1 - b0)


def _induction_residual(history, bc, g, V, tr, tf, forcing):
    def inner(s):
        u_c = cell_velocity(s)
        b_c = cell_bfield(s)
        J = cell_current(s)
        curl_phi_rows = tf.curl(s.t, *g.cell_mesh())
        curl_phi = np.stack([np.broadcast_to(np.asarray(c, dtype=float), g.cell_shape())
                             for c in curl_phi_rows], axis=-1)
        term = 0.0
        if tf.dt is not None:
            dphi_rows = tf.dt(s.t, *g.cell_mesh())
            dphi = np.stack([np.broadcast_to(np.asarray(c, dtype=float), g.cell_shape())
                             for c in dphi_rows], axis=-1)
            term += float(np.sum(np.sum(b_c * dphi, axis=-1)) * V)
        bxu = np.cross(b_c, u_c, axis=-1)
        term -= float(np.sum(np.sum(bxu * curl_phi, axis=-1)) * V)
        term -= float(np.sum(tr.zeta(s.theta) * np.sum(J * curl_phi, axis=-1)) * V)
        if forcing is not None and forcing.emf is not None:
            fe = forcing.emf(s.t, g)
            fe_c = np.stack([
                _avg(_avg(fe[0], 1), 2), _avg(_avg(fe[1], 0), 2), _avg(_avg(fe[2], 0), 1),
            ], axis=-1)
            term -= float(np.sum(np.sum(fe_c * curl_phi, axis=-1)) * V)
        return term

    def bracket(s):
        phi = _vector_cells_of(tf, s.t, g)
        b_c = cell_bfield(s)
        return float(np.sum(np.sum(b_c * phi, axis=-1)) * V)

    integral, b0, b1 = _stream_balance(history, bc, inner, bracket)
    return integral - (b1 - b0)


# -- relative energy -----------------------------------------------------------------


def relative_energy_density(gas: thermo.GasModel, rho, theta, r, Theta) -> np.ndarray:
    """Thermodynamic part of the relative energy (Bregman divergence).

    rho e(rho,theta) - Theta (rho s(rho,theta) - r s(r,Theta))
      - (e(r,Theta) - Theta s(r,Theta) + p(r,Theta)/r)(rho - r) - r e(r,Theta).
    Non-negative for positive arguments; zero iff (rho, theta) = (r, Theta).
    """
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    r = np.asarray(r, dtype=float)
    Theta = np.asarray(Theta, dtype=float)
    if np.any(r <= 0.0) or np.any(Theta <= 0.0):
        raise thermo.ThermoDomainError("reference fields must be positive")
    pt = thermo.eos_eval(gas, rho, theta)
    rt = thermo.eos_eval(gas, r, Theta)
    gibbs = rt.e - Theta * rt.s + rt.p / r
    return (rho * pt.e - Theta * (rho * pt.s - r * rt.s)
            - gibbs * (rho - r) - r * rt.e)


def relative_energy(state: FieldState, reference, gas: thermo.GasModel) -> float:
    """Integral relative energy between a state and sampled reference fields.

    ``reference`` provides cell fields r, Theta and face tuples U, H (see
    verification.sample_reference); kinetic and magnetic contributions use
    face-square averages so every cell contribution is non-negative.
    """
    g = state.grid
    r, Theta, U, H = reference
    du2 = (_sq_avg(state.ux - U[0], 0) + _sq_avg(state.uy - U[1], 1)
           + _sq_avg(state.uz - U[2], 2))
    db2 = (_sq_avg(state.bx - H[0], 0) + _sq_avg(state.by - H[1], 1)
           + _sq_avg(state.bz - H[2], 2))
    dens = 0.5 * state.rho * du2 + 0.5 * db2 + relative_energy_density(
        gas, state.rho, state.theta, r, Theta)
    return float(np.sum(dens) * g.cell_volume)


def ess_res_split(state: FieldState, r, Theta) -> EssResSplit:
    """Essential/residual mask by the half/double rule on (rho, theta)."""
    r = np.asarray(r, dtype=float)
    Theta = np.asarray(Theta, dtype=float)
    if np.any(r <= 0.0) or np.any(Theta <= 0.0):
        raise ValueError("reference fields must be positive")
    bounds = (0.5 * float(np.min(r)), 2.0 * float(np.max(r)),
              0.5 * float(np.min(Theta)), 2.0 * float(np.max(Theta)))
    mask = ((state.rho >= bounds[0]) & (state.rho <= bounds[1])
            & (state.theta >= bounds[2]) & (state.theta <= bounds[3]))
    return EssResSplit(ess_mask=mask, bounds=bounds)


# -- per-sample report row -------------------------------------------------------------


def energy_report_row(state: FieldState, gas: thermo.GasModel,
                      tr: transport_mod.TransportModel, bc: BoundarySpec,
                      theta_tilde, entropy_production_integral: float,
                      ballistic_residual: float) -> EnergyReport:
    st = state if state.ghosts is not None else apply_boundaries(state, bc, state.t)
    return EnergyReport(
        t=st.t,
        total_energy=total_energy(st, gas),
        ballistic_energy=ballistic_energy(st, gas, theta_tilde, bc, st.t),
        entropy_total=total_entropy(st, gas),
        entropy_production_integral=entropy_production_integral,
        ballistic_residual=ballistic_residual,
        divB_max=float(np.max(np.abs(st.div_b()))),
        boundary_heat_flux=boundary_heat_flux(st, tr),
        boundary_poynting_flux=boundary_poynting_flux(st, tr),
    )
