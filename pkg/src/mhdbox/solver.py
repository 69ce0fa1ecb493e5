"""Time integration of the regularized compressible MHD system.

Prognostic variables (conservative form): density at cells, face-normal
momentum, the augmented internal energy density rho*e_delta = rho*(e + delta
theta) at cells, and face-normal magnetic components evolved by constrained
transport (edge electromotive forces), which preserves the discrete
divergence of B to machine precision.

Regularization terms (all optional through eps, delta >= 0):

  * eps * lap(rho) in the continuity equation with Neumann density ghosts,
  * -eps (grad rho . grad) u in the momentum equation (the energy-compatible
    pairing with the parabolic density term),
  * delta-augmented pressure p + delta (rho^2 + rho^Gamma), deviatoric stress
    coefficient mu + delta theta, heat conductivity kappa + delta
    (theta^Gamma + 1/theta), energy carrier e + delta theta,
  * internal-energy sources eps*delta*(rho^(Gamma-2) + 2)|grad rho|^2
    + delta/theta^2 - eps theta^5.

Convective fluxes are upwind (local Lax-Friedrichs on reconstructed states,
piecewise-linear by default); pressure, stress, heat flux and induction use
centered mimetic stencils.  Explicit stages use SSP-RK3 by default; Heun is
available but is only neutrally stable for the centered acoustic/Alfven
coupling and needs noticeable physical diffusion to damp grid modes.
Diffusion may instead be treated as a frozen-coefficient implicit solve
(conjugate gradients to 1e-10 relative residual).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from mhdbox import thermo
from mhdbox import transport as transport_mod
from mhdbox.grid import (
    BoundarySpec,
    BoxGrid,
    FieldState,
    MagneticBC,
    _pad_cell_like,
    _pad_face_normal,
    _padded_coords,
    _wall_meshes,
    apply_boundaries,
    sync_periodic,
)

__all__ = [
    "RegularizationParams",
    "StepControl",
    "Forcing",
    "step",
    "induction_step",
    "rhs_continuity",
    "rhs_momentum",
    "rhs_induction",
    "rhs_internal_energy",
    "PositivityFailure",
    "SolverDivergence",
    "CFLCollapse",
]


class PositivityFailure(RuntimeError):
    """rho or theta would leave the positive cone even at the smallest dt."""


class SolverDivergence(RuntimeError):
    """An implicit linear solve stalled."""


class CFLCollapse(RuntimeError):
    """The accepted time step collapsed below 1e-14 * dt_max."""


@dataclass(frozen=True)
class RegularizationParams:
    """Parameters (eps, delta, Gamma) of the approximation scheme."""

    eps: float = 0.0
    delta: float = 0.0
    Gamma: float = 8.0
    # coefficient of the eps*delta |grad rho|^2 source: "plain" uses
    # (rho^(Gamma-2) + 2); "energy" uses (Gamma rho^(Gamma-2) + 2)
    grad_rho_variant: str = "plain"

    def __post_init__(self) -> None:
        if self.eps < 0.0 or self.delta < 0.0:
            raise ValueError("eps and delta must be non-negative")
        if self.Gamma <= 2.0:
            raise ValueError("Gamma must exceed 2")
        if self.grad_rho_variant not in ("plain", "energy"):
            raise ValueError("grad_rho_variant must be 'plain' or 'energy'")


@dataclass(frozen=True)
class StepControl:
    cfl: float = 0.4
    dt_max: float = 1.0
    max_halvings: int = 12
    diffusion_treatment: str = "explicit"  # or "lagged_implicit"
    time_scheme: str = "ssprk3"  # or "heun"
    advection: str = "plm"  # or "donor"

    def __post_init__(self) -> None:
        if not (0.0 < self.cfl <= 1.0):
            raise ValueError("cfl must lie in (0, 1]")
        if self.diffusion_treatment not in ("explicit", "lagged_implicit"):
            raise ValueError("diffusion_treatment must be explicit or lagged_implicit")
        if self.time_scheme not in ("ssprk3", "heun"):
            raise ValueError("time_scheme must be ssprk3 or heun")
        if self.advection not in ("plm", "donor"):
            raise ValueError("advection must be plm or donor")


@dataclass
class Forcing:
    """Manufactured source terms; every member may be None.

    f_mass(t, grid) -> cells; f_mom(t, grid) -> face tuple; f_en(t, grid) ->
    cells; emf(t, grid) -> edge tuple added to the electromotive force (which
    keeps the induction source solenoidal under constrained transport).
    """

    f_mass: Optional[Callable] = None
    f_mom: Optional[Callable] = None
    f_en: Optional[Callable] = None
    emf: Optional[Callable] = None


# -- small array helpers -------------------------------------------------------


def _avg(a: np.ndarray, axis: int) -> np.ndarray:
    sl0 = [slice(None)] * a.ndim
    sl1 = [slice(None)] * a.ndim
    sl0[axis] = slice(None, -1)
    sl1[axis] = slice(1, None)
    return 0.5 * (a[tuple(sl0)] + a[tuple(sl1)])


def _diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    sl0 = [slice(None)] * a.ndim
    sl1 = [slice(None)] * a.ndim
    sl0[axis] = slice(None, -1)
    sl1[axis] = slice(1, None)
    return (a[tuple(sl1)] - a[tuple(sl0)]) / h


def _slice_pad(a: np.ndarray, keep: tuple[bool, bool, bool]) -> np.ndarray:
    """Strip the one-layer padding on axes where keep[ax] is False."""
    sl = tuple(slice(None) if k else slice(1, -1) for k in keep)
    return a[sl]


def _wrap_or_mirror_pad(a: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    lo = np.take(a, [-1 if periodic else 0], axis=axis)
    hi = np.take(a, [0 if periodic else -1], axis=axis)
    return np.concatenate([lo, a, hi], axis=axis)


def _plm_interfaces(qp: np.ndarray, axis: int, use_slopes: bool):
    """Left/right interface states from a 1-layer padded array along `axis`.

    For m real points the result has m+1 interfaces; the outermost states
    fall back to the ghost values (their interfaces are only used with a
    vanishing transport velocity on wall axes and are re-aliased on periodic
    axes).
    """
    sl_c = [slice(None)] * qp.ndim
    sl_l = [slice(None)] * qp.ndim
    sl_r = [slice(None)] * qp.ndim
    sl_c[axis] = slice(1, -1)
    sl_l[axis] = slice(None, -2)
    sl_r[axis] = slice(2, None)
    c = qp[tuple(sl_c)]
    s = 0.5 * (qp[tuple(sl_r)] - qp[tuple(sl_l)]) if use_slopes else np.zeros_like(c)

    shape = list(c.shape)
    shape[axis] += 1
    qL = np.empty(shape)
    qR = np.empty(shape)

    sl_first = [slice(None)] * qp.ndim
    sl_last = [slice(None)] * qp.ndim
    sl_first[axis] = slice(0, 1)
    sl_last[axis] = slice(-1, None)
    sl_hi = [slice(None)] * qp.ndim
    sl_lo = [slice(None)] * qp.ndim
    sl_hi[axis] = slice(1, None)
    sl_lo[axis] = slice(None, -1)

    qL[tuple(sl_first)] = qp[tuple(sl_first)]
    qL[tuple(sl_hi)] = c + 0.5 * s
    qR[tuple(sl_last)] = qp[tuple(sl_last)]
    qR[tuple(sl_lo)] = c - 0.5 * s
    return qL, qR


def _upwind_flux(un: np.ndarray, qL: np.ndarray, qR: np.ndarray) -> np.ndarray:
    return np.maximum(un, 0.0) * qL + np.minimum(un, 0.0) * qR


def _face_rho(grid: BoxGrid, rho_p: np.ndarray):
    """Arithmetic face densities from the padded cell density."""
    out = []
    for ax in range(3):
        keep = tuple(a == ax for a in range(3))
        rp = _slice_pad(rho_p, keep)
        out.append(_avg(rp, ax))
    return tuple(out)


def _wall_zero(grid: BoxGrid, arrs) -> None:
    """Zero the extremal planes of each array along its own (enumerate) axis."""
    for ax, arr in enumerate(arrs):
        if grid.periodic[ax]:
            continue
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[ax] = 0
        sl_hi[ax] = -1
        arr[tuple(sl_lo)] = 0.0
        arr[tuple(sl_hi)] = 0.0


def _pin_wall_plane(grid: BoxGrid, arr: np.ndarray, axis: int, value=0.0) -> None:
    if grid.periodic[axis]:
        return
    sl_lo = [slice(None)] * 3
    sl_hi = [slice(None)] * 3
    sl_lo[axis] = 0
    sl_hi[axis] = -1
    arr[tuple(sl_lo)] = value
    arr[tuple(sl_hi)] = value


def _edge_theta(grid: BoxGrid, theta_p: np.ndarray):
    """Temperature averaged to the three edge families."""
    tx = _avg(_avg(theta_p[1:-1, :, :], 1), 2)
    ty = _avg(_avg(theta_p[:, 1:-1, :], 0), 2)
    tz = _avg(_avg(theta_p[:, :, 1:-1], 0), 1)
    return tx, ty, tz


def _zero_wall_edges(grid: BoxGrid, emf) -> None:
    """Zero the electromotive force on edges lying in non-periodic walls."""
    ex, ey, ez = emf
    planes = {0: (ey, ez), 1: (ex, ez), 2: (ex, ey)}
    for ax in range(3):
        if grid.periodic[ax]:
            continue
        for arr in planes[ax]:
            sl_lo = [slice(None)] * 3
            sl_hi = [slice(None)] * 3
            sl_lo[ax] = 0
            sl_hi[ax] = -1
            arr[tuple(sl_lo)] = 0.0
            arr[tuple(sl_hi)] = 0.0


# -- EOS inversion --------------------------------------------------------------


def _theta_from_energy(gas: thermo.GasModel, delta: float, rho: np.ndarray,
                       w: np.ndarray, theta_guess: np.ndarray) -> np.ndarray:
    """Invert w = rho e(rho, theta) + delta rho theta for theta > 0.

    w is monotone and convex in theta, so Newton started from the
    radiation-free closed form (an upper bound of the root) converges
    monotonically.
    """
    c1, p_inf, a = gas.c1, gas.p_inf, gas.a
    cold = 1.5 * p_inf * rho ** (5.0 / 3.0)
    denom = (1.5 * c1 + delta) * rho
    avail = w - cold
    if np.any(avail <= 0.0) or not np.all(np.isfinite(avail)):
        raise PositivityFailure("internal energy fell below the degenerate floor")
    theta = avail / denom
    if a == 0.0:
        return theta
    for _ in range(60):
        f = denom * theta + a * theta**4 - avail
        df = denom + 4.0 * a * theta**3
        dth = f / df
        theta = theta - dth
        if np.max(np.abs(dth)) <= 1e-15 * (1.0 + np.max(theta)):
            break
    if np.any(theta <= 0.0) or not np.all(np.isfinite(theta)):
        raise PositivityFailure("temperature inversion left the positive cone")
    return theta


def _energy_from_theta(gas: thermo.GasModel, delta: float, rho, theta):
    pt = thermo.eos_eval(gas, rho, theta)
    return rho * pt.e + delta * rho * theta


# -- right-hand-side assembly -----------------------------------------------------


def _assemble(state: FieldState, bc: BoundarySpec, params: RegularizationParams,
              gas: thermo.GasModel, tr: transport_mod.TransportModel,
              control: StepControl, forcing: Optional[Forcing] = None,
              include_diffusion: bool = True) -> dict:
    """Compute every RHS term on a boundaries-applied state."""
    if state.ghosts is None:
        raise ValueError("boundaries must be applied before RHS assembly")
    g = state.grid
    gh = state.ghosts
    hx, hy, hz = g.h
    eps, delta, Gamma = params.eps, params.delta, params.Gamma
    use_plm = control.advection == "plm"
    t = state.t

    rho, theta = state.rho, state.theta
    ux, uy, uz = state.u
    rho_p, theta_p = gh.rho_p, gh.theta_p
    uxp, uyp, uzp = gh.u_p
    bxp, byp, bzp = gh.b_p

    ops = g.ops()
    pt = thermo.eos_eval(gas, rho, theta)

    out: dict = {}

    # --- continuity -----------------------------------------------------------
    frho = []
    for ax, un in enumerate((ux, uy, uz)):
        keep = tuple(a == ax for a in range(3))
        rp = _slice_pad(rho_p, keep)
        qL, qR = _plm_interfaces(rp, ax, use_plm)
        frho.append(_upwind_flux(un, qL, qR))
    _wall_zero(g, frho)
    rhs_rho = -ops.divergence(*frho)
    if eps > 0.0:
        rhs_rho = rhs_rho + eps * ops.laplacian(rho_p)
    if forcing is not None and forcing.f_mass is not None:
        rhs_rho = rhs_rho + forcing.f_mass(t, g)
    out["rho"] = rhs_rho
    out["mass_flux"] = tuple(frho)

    # --- shared velocity gradients ---------------------------------------------
    dudx = _diff(ux, 0, hx)
    dvdy = _diff(uy, 1, hy)
    dwdz = _diff(uz, 2, hz)
    divu = dudx + dvdy + dwdz

    dux_dy = _diff(uxp[1:-1, :, 1:-1], 1, hy)   # on z-edges
    duy_dx = _diff(uyp[:, 1:-1, 1:-1], 0, hx)
    dux_dz = _diff(uxp[1:-1, 1:-1, :], 2, hz)   # on y-edges
    duz_dx = _diff(uzp[:, 1:-1, 1:-1], 0, hx)
    duy_dz = _diff(uyp[1:-1, 1:-1, :], 2, hz)   # on x-edges
    duz_dy = _diff(uzp[1:-1, :, 1:-1], 1, hy)
    sym_xy = 0.5 * (dux_dy + duy_dx)
    sym_xz = 0.5 * (dux_dz + duz_dx)
    sym_yz = 0.5 * (duy_dz + duz_dy)

    th_ex, th_ey, th_ez = _edge_theta(g, theta_p)
    mu_c = tr.mu(theta) + delta * theta
    eta_c = tr.eta(theta)

    # --- viscous stress (deviatoric delta-augmented) ------------------------------
    if include_diffusion:
        sxx = 2.0 * mu_c * dudx + (eta_c - 2.0 * mu_c / 3.0) * divu
        syy = 2.0 * mu_c * dvdy + (eta_c - 2.0 * mu_c / 3.0) * divu
        szz = 2.0 * mu_c * dwdz + (eta_c - 2.0 * mu_c / 3.0) * divu
        sxy = 2.0 * (tr.mu(th_ez) + delta * th_ez) * sym_xy
        sxz = 2.0 * (tr.mu(th_ey) + delta * th_ey) * sym_xz
        syz = 2.0 * (tr.mu(th_ex) + delta * th_ex) * sym_yz

    # --- current and electromotive force -------------------------------------------
    jx, jy, jz = ops.curl_face_to_edge(bxp, byp, bzp)

    by_xe = _avg(byp[1:-1, 1:-1, :], 2)
    uz_xe = _avg(uzp[1:-1, :, 1:-1], 1)
    bz_xe = _avg(bzp[1:-1, :, 1:-1], 1)
    uy_xe = _avg(uyp[1:-1, 1:-1, :], 2)
    emf_x = by_xe * uz_xe - bz_xe * uy_xe

    bz_ye = _avg(bzp[:, 1:-1, 1:-1], 0)
    ux_ye = _avg(uxp[1:-1, 1:-1, :], 2)
    bx_ye = _avg(bxp[1:-1, 1:-1, :], 2)
    uz_ye = _avg(uzp[:, 1:-1, 1:-1], 0)
    emf_y = bz_ye * ux_ye - bx_ye * uz_ye

    bx_ze = _avg(bxp[1:-1, :, 1:-1], 1)
    uy_ze = _avg(uyp[:, 1:-1, 1:-1], 0)
    by_ze = _avg(byp[:, 1:-1, 1:-1], 0)
    ux_ze = _avg(uxp[1:-1, :, 1:-1], 1)
    emf_z = bx_ze * uy_ze - by_ze * ux_ze

    emf = [emf_x, emf_y, emf_z]
    if include_diffusion:
        emf[0] = emf[0] + tr.zeta(th_ex) * jx
        emf[1] = emf[1] + tr.zeta(th_ey) * jy
        emf[2] = emf[2] + tr.zeta(th_ez) * jz
    if forcing is not None and forcing.emf is not None:
        fe = forcing.emf(t, g)
        emf = [e + f for e, f in zip(emf, fe)]
    if bc.magnetic_bc is MagneticBC.NORMAL_FLUX_ZERO_EMF:
        _zero_wall_edges(g, emf)
    dbx, dby, dbz = ops.curl_edge_to_face(*emf)
    out["emf"] = tuple(emf)
    out["b"] = (-dbx, -dby, -dbz)

    # --- momentum -------------------------------------------------------------------
    p_delta = pt.p + delta * (rho**2 + rho**Gamma)
    pd_p = p_delta
    for ax in range(3):
        pd_p = _wrap_or_mirror_pad(pd_p, ax, g.periodic[ax])
    grad_p = ops.gradient(pd_p)

    rf = _face_rho(g, rho_p)
    g_faces = bc.g_on_faces(g, t)

    # Lorentz force (curl B) x B averaged to faces
    jy_fx = _avg(jy, 2)
    jz_fx = _avg(jz, 1)
    bz_fx = _avg(_avg(bzp[:, 1:-1, 1:-1], 2), 0)
    by_fx = _avg(_avg(byp[:, 1:-1, 1:-1], 1), 0)
    jz_fy = _avg(jz, 0)
    jx_fy = _avg(jx, 2)
    bx_fy = _avg(_avg(bxp[1:-1, :, 1:-1], 0), 1)
    bz_fy = _avg(_avg(bzp[1:-1, :, 1:-1], 2), 1)
    jx_fz = _avg(jx, 1)
    jy_fz = _avg(jy, 0)
    by_fz = _avg(_avg(byp[1:-1, 1:-1, :], 1), 2)
    bx_fz = _avg(_avg(bxp[1:-1, 1:-1, :], 0), 2)
    lorentz = (
        jy_fx * bz_fx - jz_fx * by_fx,
        jz_fy * bx_fy - jx_fy * bz_fy,
        jx_fz * by_fz - jy_fz * bx_fz,
    )

    u_all = (ux, uy, uz)
    up_all = (uxp, uyp, uzp)
    rhs_m = []
    for d in range(3):
        un_d = u_all[d]
        upd = up_all[d]
        adv = np.zeros(g.face_shape(d))

        # normal-direction flux lives at cells
        keep_d = tuple(a == d for a in range(3))
        upd_1d = _slice_pad(upd, keep_d)
        qL, qR = _plm_interfaces(upd_1d, d, use_plm)
        sl_c = [slice(None)] * 3
        sl_c[d] = slice(1, -1)
        ubar_c = _avg(un_d, d)
        f_dd = rho * _upwind_flux(ubar_c, qL[tuple(sl_c)], qR[tuple(sl_c)])
        adv += _diff(_wrap_or_mirror_pad(f_dd, d, g.periodic[d]), d, g.h[d])

        # transverse fluxes live on the edges bounding the d-faces
        for a in range(3):
            if a == d:
                continue
            upa = up_all[a]
            keep_da = tuple(ax == d for ax in range(3))
            vbar = _avg(_slice_pad(upa, keep_da), d)
            keep_a = tuple(ax == a for ax in range(3))
            qLa, qRa = _plm_interfaces(_slice_pad(upd, keep_a), a, use_plm)
            keep_r = tuple(ax in (a, d) for ax in range(3))
            r_e = _avg(_avg(_slice_pad(rho_p, keep_r), a), d)
            flux = r_e * _upwind_flux(vbar, qLa, qRa)
            _pin_wall_plane(g, flux, a)
            adv += _diff(flux, a, g.h[a])

        rhs_d = -adv - grad_p[d] + lorentz[d] + rf[d] * g_faces[d]

        if include_diffusion:
            diag = (sxx, syy, szz)[d]
            divS = _diff(_wrap_or_mirror_pad(diag, d, g.periodic[d]), d, g.h[d])
            offd = {(0, 1): sxy, (1, 0): sxy, (0, 2): sxz, (2, 0): sxz,
                    (1, 2): syz, (2, 1): syz}
            for a in range(3):
                if a != d:
                    divS += _diff(offd[(d, a)], a, g.h[a])
            rhs_d += divS

        if eps > 0.0:
            # -(eps) (grad rho . grad) u_d, centered at d-faces
            dot = np.zeros(g.face_shape(d))
            for a in range(3):
                keep_a = tuple(ax == a for ax in range(3))
                up_a = _slice_pad(upd, keep_a)
                n_a = up_a.shape[a]
                du = (np.take(up_a, range(2, n_a), axis=a)
                      - np.take(up_a, range(0, n_a - 2), axis=a)) / (2.0 * g.h[a])
                if a == d:
                    keep_rn = tuple(ax == a for ax in range(3))
                    drho = _diff(_slice_pad(rho_p, keep_rn), a, g.h[a])
                else:
                    keep_rt = tuple(ax in (a, d) for ax in range(3))
                    rp2 = _slice_pad(rho_p, keep_rt)
                    n_r = rp2.shape[a]
                    ctr = (np.take(rp2, range(2, n_r), axis=a)
                           - np.take(rp2, range(0, n_r - 2), axis=a)) / (2.0 * g.h[a])
                    drho = _avg(ctr, d)
                dot += drho * du
            rhs_d -= eps * dot

        if forcing is not None and forcing.f_mom is not None:
            rhs_d = rhs_d + forcing.f_mom(t, g)[d]

        _pin_wall_plane(g, rhs_d, d)
        rhs_m.append(rhs_d)
    out["m"] = tuple(rhs_m)

    # --- internal energy ----------------------------------------------------------
    w_p = rho_p * thermo.eos_eval(gas, rho_p, theta_p).e + delta * rho_p * theta_p
    fw = []
    for ax, un in enumerate((ux, uy, uz)):
        keep = tuple(a == ax for a in range(3))
        qL, qR = _plm_interfaces(_slice_pad(w_p, keep), ax, use_plm)
        fw.append(_upwind_flux(un, qL, qR))
    _wall_zero(g, fw)
    rhs_w = -ops.divergence(*fw)

    gtf = ops.gradient(theta_p)
    out["grad_theta_faces"] = gtf
    if include_diffusion:
        thf = (_avg(theta_p[:, 1:-1, 1:-1], 0),
               _avg(theta_p[1:-1, :, 1:-1], 1),
               _avg(theta_p[1:-1, 1:-1, :], 2))
        q_d = []
        for comp in range(3):
            k_eff = tr.kappa(thf[comp])
            if delta > 0.0:
                k_eff = k_eff + delta * (thf[comp]**Gamma + 1.0 / thf[comp])
            q_d.append(-k_eff * gtf[comp])
        rhs_w -= ops.divergence(*q_d)
        out["q_delta"] = tuple(q_d)

    # dissipation sources as non-negative cell quadratic forms
    dev_xx = dudx - divu / 3.0
    dev_yy = dvdy - divu / 3.0
    dev_zz = dwdz - divu / 3.0
    dev2 = (dev_xx**2 + dev_yy**2 + dev_zz**2
            + 2.0 * (_avg(_avg(sym_xy**2, 0), 1)
                     + _avg(_avg(sym_xz**2, 0), 2)
                     + _avg(_avg(sym_yz**2, 1), 2)))
    q_visc = 2.0 * mu_c * dev2 + eta_c * divu**2
    j2 = _avg(_avg(jx**2, 1), 2) + _avg(_avg(jy**2, 0), 2) + _avg(_avg(jz**2, 0), 1)
    q_joule = tr.zeta(theta) * j2
    rhs_w += q_visc + q_joule - pt.p * divu
    out["q_visc"] = q_visc
    out["q_joule"] = q_joule
    out["j2"] = j2
    out["divu"] = divu

    if eps > 0.0 and delta > 0.0:
        grx, gry, grz = ops.gradient(rho_p)
        gr2 = _avg(grx**2, 0) + _avg(gry**2, 1) + _avg(grz**2, 2)
        if params.grad_rho_variant == "plain":
            coeff = rho ** (Gamma - 2.0) + 2.0
        else:
            coeff = Gamma * rho ** (Gamma - 2.0) + 2.0
        rhs_w += eps * delta * coeff * gr2
    if delta > 0.0:
        rhs_w += delta / theta**2
    if eps > 0.0:
        rhs_w -= eps * theta**5
    if forcing is not None and forcing.f_en is not None:
        rhs_w = rhs_w + forcing.f_en(t, g)
    out["w"] = rhs_w

    return out


# -- public RHS operations ---------------------------------------------------------


def rhs_continuity(state, bc, params, gas, tr, control=StepControl(), forcing=None):
    """-div(rho u) + eps lap(rho) on the boundaries-applied state."""
    return _assemble(state, bc, params, gas, tr, control, forcing)["rho"]


def rhs_momentum(state, bc, params, gas, tr, control=StepControl(), forcing=None):
    """Face-normal momentum tendencies including Lorentz force and eps-coupling."""
    return _assemble(state, bc, params, gas, tr, control, forcing)["m"]


def rhs_induction(state, bc, params, gas, tr, control=StepControl(), forcing=None):
    """Edge EMF and the constrained-transport tendency -curl(EMF)."""
    r = _assemble(state, bc, params, gas, tr, control, forcing)
    return r["emf"], r["b"]


def rhs_internal_energy(state, bc, params, gas, tr, control=StepControl(), forcing=None):
    """Tendency of the augmented internal energy rho e_delta."""
    return _assemble(state, bc, params, gas, tr, control, forcing)["w"]


# -- time stepping ------------------------------------------------------------------


def _signal_dt(state: FieldState, gas, tr, params, control, include_diffusion: bool) -> float:
    g = state.grid
    pt = thermo.eos_eval(gas, state.rho, state.theta)
    cs2 = pt.dp_drho + state.theta * pt.dp_dtheta**2 / (state.rho**2 * pt.de_dtheta)
    if params.delta > 0.0:
        cs2 = cs2 + params.delta * (2.0 * state.rho
                                    + params.Gamma * state.rho ** (params.Gamma - 1.0))
    b2 = _avg(state.bx**2, 0) + _avg(state.by**2, 1) + _avg(state.bz**2, 2)
    cf = np.sqrt(cs2 + b2 / state.rho)

    dt = control.dt_max
    for ax, un in enumerate(state.u):
        u_c = np.abs(_avg(un, ax))
        dt = min(dt, control.cfl * g.h[ax] / float(np.max(u_c + cf)))

    if include_diffusion:
        th = state.theta
        nu_m = (2.0 * (tr.mu(th) + params.delta * th) + tr.eta(th)) / state.rho
        ceff = state.rho * (pt.de_dtheta + params.delta)
        kap = tr.kappa(th)
        if params.delta > 0.0:
            kap = kap + params.delta * (th**params.Gamma + 1.0 / th)
        chi = kap / ceff
        nu = float(np.max(np.maximum(np.maximum(nu_m, chi), tr.zeta(th))))
        nu = max(nu, params.eps)
        inv_h2 = sum(1.0 / h**2 for h in g.h)
        if nu > 0.0:
            dt = min(dt, 0.4 / (2.0 * nu * inv_h2))
    return dt


def _to_conserved(state: FieldState, gas, params):
    rf = _face_rho(state.grid, state.ghosts.rho_p)
    return {
        "rho": state.rho.copy(),
        "m": tuple(u * r for u, r in zip(state.u, rf)),
        "w": _energy_from_theta(gas, params.delta, state.rho, state.theta),
        "b": tuple(c.copy() for c in state.b),
    }


def _mirror_pad_rho(grid: BoxGrid, rho: np.ndarray) -> np.ndarray:
    p = rho
    for ax in range(3):
        p = _wrap_or_mirror_pad(p, ax, grid.periodic[ax])
    return p


def _from_conserved(U: dict, grid: BoxGrid, gas, params, theta_guess, t) -> FieldState:
    rho = U["rho"]
    if np.any(rho <= 0.0) or not np.all(np.isfinite(rho)):
        raise PositivityFailure("density left the positive cone")
    theta = _theta_from_energy(gas, params.delta, rho, U["w"], theta_guess)
    rf = _face_rho(grid, _mirror_pad_rho(grid, rho))
    u = tuple(m / r for m, r in zip(U["m"], rf))
    return FieldState(grid=grid, rho=rho, theta=theta,
                      ux=u[0], uy=u[1], uz=u[2],
                      bx=U["b"][0].copy(), by=U["b"][1].copy(), bz=U["b"][2].copy(), t=t)


def _axpy(U0: dict, U1: dict, a0: float, a1: float) -> dict:
    return {
        "rho": a0 * U0["rho"] + a1 * U1["rho"],
        "m": tuple(a0 * x + a1 * y for x, y in zip(U0["m"], U1["m"])),
        "w": a0 * U0["w"] + a1 * U1["w"],
        "b": tuple(a0 * x + a1 * y for x, y in zip(U0["b"], U1["b"])),
    }


def _advance(U: dict, R: dict, dt: float) -> dict:
    return {
        "rho": U["rho"] + dt * R["rho"],
        "m": tuple(m + dt * r for m, r in zip(U["m"], R["m"])),
        "w": U["w"] + dt * R["w"],
        "b": tuple(b + dt * r for b, r in zip(U["b"], R["b"])),
    }


def _cg(matvec, b: np.ndarray, x0: np.ndarray, rtol: float, maxiter: int) -> np.ndarray:
    """Matrix-free conjugate gradients on flattened arrays."""
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = x0.copy()
    r = b - matvec(x)
    p = r.copy()
    rs = float(r @ r)
    for _ in range(maxiter):
        if np.sqrt(rs) <= rtol * bnorm:
            return x
        Ap = matvec(p)
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) <= 10.0 * rtol * bnorm:
        return x
    raise SolverDivergence(f"conjugate gradients stalled (residual {np.sqrt(rs) / bnorm:.3e})")


def _pad_theta_dirichlet(grid: BoxGrid, bc: BoundarySpec, t: float, th: np.ndarray,
                         zero_trace: bool) -> np.ndarray:
    p = th
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


def _pad_b_for_curl(grid: BoxGrid, bc: BoundarySpec, t: float, b, zero_trace: bool):
    """Magnetic ghost padding mirroring apply_boundaries, optionally trace-free."""
    tangential_dirichlet = bc.magnetic_bc is MagneticBC.TANGENTIAL_DIRICHLET
    out = []
    for comp, arr in enumerate(b):
        p = _pad_face_normal(arr, comp, "even", periodic=grid.periodic[comp])
        coords_now = [grid.cell_coords(a) for a in range(3)]
        coords_now[comp] = _padded_coords(grid, comp, "face")
        for ax in range(3):
            if ax == comp:
                continue
            if grid.periodic[ax]:
                p = _pad_cell_like(p, ax, "mirror", periodic=True)
            elif tangential_dirichlet:
                if zero_trace:
                    p = _pad_cell_like(p, ax, "dirichlet", np.zeros(1), np.zeros(1))
                else:
                    from mhdbox.grid import _eval_vector
                    lo_mesh, hi_mesh = _wall_meshes(grid, coords_now, ax)
                    p = _pad_cell_like(p, ax, "dirichlet",
                                       _eval_vector(bc.B_B, t, lo_mesh, comp),
                                       _eval_vector(bc.B_B, t, hi_mesh, comp))
            else:
                p = _pad_cell_like(p, ax, "mirror")
            coords_now[ax] = _padded_coords(grid, ax, "cell")
        out.append(p)
    return tuple(out)


def _implicit_diffusion(state: FieldState, frozen: FieldState, bc, params, gas, tr,
                        dt: float, rtol: float = 1e-10) -> FieldState:
    """Frozen-coefficient backward-Euler update of conduction, viscosity, resistivity.

    Transport coefficients are evaluated at the step-start state ``frozen``.
    Each solve is a symmetric positive definite conjugate-gradient iteration;
    the viscous solve keeps only div(mu grad u) per component (remaining
    stress couplings are explicit, first-order splitting).
    """
    g = state.grid
    ops = g.ops()
    delta, Gamma = params.delta, params.Gamma
    st = state if state.ghosts is not None else apply_boundaries(state, bc, state.t)
    fro = frozen if frozen.ghosts is not None else apply_boundaries(frozen, bc, frozen.t)
    th0_p = fro.ghosts.theta_p
    t_new = st.t

    # ---- temperature ----------------------------------------------------------
    thf = (_avg(th0_p[:, 1:-1, 1:-1], 0), _avg(th0_p[1:-1, :, 1:-1], 1),
           _avg(th0_p[1:-1, 1:-1, :], 2))
    kf = []
    for comp in range(3):
        k_eff = tr.kappa(thf[comp])
        if delta > 0.0:
            k_eff = k_eff + delta * (thf[comp]**Gamma + 1.0 / thf[comp])
        kf.append(k_eff)
    pt0 = thermo.eos_eval(gas, fro.rho, fro.theta)
    C = st.rho * (pt0.de_dtheta + delta)

    def lap_theta(arr, zero_trace):
        p = _pad_theta_dirichlet(g, bc, t_new, arr, zero_trace)
        gt = ops.gradient(p)
        return ops.divergence(kf[0] * gt[0], kf[1] * gt[1], kf[2] * gt[2])

    c_aff = lap_theta(np.zeros_like(st.theta), zero_trace=False)

    def mv_theta(x):
        arr = x.reshape(st.theta.shape)
        return (C * arr - dt * lap_theta(arr, zero_trace=True)).ravel()

    rhs = (C * st.theta + dt * c_aff).ravel()
    theta_new = _cg(mv_theta, rhs, st.theta.ravel(), rtol, 5000).reshape(st.theta.shape)
    if np.any(theta_new <= 0.0):
        raise PositivityFailure("implicit conduction produced non-positive theta")

    # ---- velocity --------------------------------------------------------------
    mu0 = tr.mu(fro.theta) + delta * fro.theta
    mu_p = _mirror_pad_rho(g, mu0)
    rf = _face_rho(g, _mirror_pad_rho(g, st.rho))
    u_new = []
    for d, u_star in enumerate(st.u):
        # flux coefficients: padded cells along d; edge averages transversally
        coeff = []
        for a in range(3):
            if a == d:
                coeff.append(_slice_pad(mu_p, tuple(ax == a for ax in range(3))))
            else:
                cp = _slice_pad(mu_p, tuple(ax in (a, d) for ax in range(3)))
                coeff.append(_avg(_avg(cp, a), d))

        def mv_u(x, d=d, coeff=coeff):
            arr = x.reshape(g.face_shape(d))
            p = arr
            for ax in range(3):
                if ax == d:
                    p = _pad_face_normal(p, ax, "odd", periodic=g.periodic[ax])
                else:
                    p = _pad_cell_like(p, ax, "mirror", periodic=g.periodic[ax])
            div = np.zeros_like(arr)
            for a in range(3):
                ga = _diff(p, a, g.h[a])
                sl = [slice(1, -1)] * 3
                sl[a] = slice(None)
                ga = ga[tuple(sl)]
                div += _diff(coeff[a] * ga, a, g.h[a])
            out_arr = rf[d] * arr - dt * div
            if not g.periodic[d]:
                sl_lo = [slice(None)] * 3
                sl_hi = [slice(None)] * 3
                sl_lo[d] = 0
                sl_hi[d] = -1
                out_arr[tuple(sl_lo)] = arr[tuple(sl_lo)]
                out_arr[tuple(sl_hi)] = arr[tuple(sl_hi)]
            return out_arr.ravel()

        b_rhs = rf[d] * u_star
        _pin_wall_plane(g, b_rhs, d)
        sol = _cg(mv_u, b_rhs.ravel(), u_star.ravel(), rtol, 5000)
        u_new.append(sol.reshape(g.face_shape(d)))

    # ---- magnetic field -----------------------------------------------------------
    zeta_e = tuple(tr.zeta(t_) for t_ in _edge_theta(g, th0_p))

    def resistive_curl(bt, zero_trace):
        bp = _pad_b_for_curl(g, bc, t_new, bt, zero_trace)
        j = ops.curl_face_to_edge(*bp)
        emf = [z * c for z, c in zip(zeta_e, j)]
        if bc.magnetic_bc is MagneticBC.NORMAL_FLUX_ZERO_EMF:
            _zero_wall_edges(g, emf)
        return ops.curl_edge_to_face(*emf)

    zero_b = tuple(np.zeros(g.face_shape(c)) for c in range(3))
    c_aff_b = resistive_curl(zero_b, zero_trace=False)

    sizes = [int(np.prod(g.face_shape(c))) for c in range(3)]
    offs = np.concatenate([[0], np.cumsum(sizes)])

    def pack(bt):
        return np.concatenate([c.ravel() for c in bt])

    def unpack(x):
        return tuple(x[offs[c]:offs[c + 1]].reshape(g.face_shape(c)) for c in range(3))

    def mv_b(x):
        bt = unpack(x)
        cb = resistive_curl(bt, zero_trace=True)
        return pack(tuple(b + dt * c for b, c in zip(bt, cb)))

    rhs_b = pack(tuple(b - dt * c for b, c in zip(st.b, c_aff_b)))
    b_new = unpack(_cg(mv_b, rhs_b, pack(st.b), rtol, 5000))

    return FieldState(grid=g, rho=st.rho.copy(), theta=theta_new,
                      ux=u_new[0], uy=u_new[1], uz=u_new[2],
                      bx=b_new[0].copy(), by=b_new[1].copy(), bz=b_new[2].copy(), t=t_new)


def _try_step(s0: FieldState, bc, params, control, gas, tr, forcing, dt) -> FieldState:
    g = s0.grid
    explicit_diff = control.diffusion_treatment == "explicit"
    U0 = _to_conserved(s0, gas, params)

    def rhs_of(st):
        return _assemble(st, bc, params, gas, tr, control, forcing,
                         include_diffusion=explicit_diff)

    def stage(U, st_time, guess):
        st = _from_conserved(U, g, gas, params, guess, st_time)
        return apply_boundaries(st, bc, st_time)

    R0 = rhs_of(s0)
    if control.time_scheme == "ssprk3":
        U1 = _advance(U0, R0, dt)
        s1 = stage(U1, s0.t + dt, s0.theta)
        R1 = rhs_of(s1)
        U2 = _axpy(U0, _advance(U1, R1, dt), 0.75, 0.25)
        s2 = stage(U2, s0.t + 0.5 * dt, s1.theta)
        R2 = rhs_of(s2)
        U3 = _axpy(U0, _advance(U2, R2, dt), 1.0 / 3.0, 2.0 / 3.0)
        s_new = stage(U3, s0.t + dt, s2.theta)
    else:  # heun
        U1 = _advance(U0, R0, dt)
        s1 = stage(U1, s0.t + dt, s0.theta)
        R1 = rhs_of(s1)
        U2 = _axpy(_advance(U0, R0, dt), _advance(U0, R1, dt), 0.5, 0.5)
        s_new = stage(U2, s0.t + dt, s1.theta)

    if not explicit_diff:
        s_new = _implicit_diffusion(s_new, s0, bc, params, gas, tr, dt)

    if np.any(s_new.theta <= 0.0):
        raise PositivityFailure("temperature left the positive cone")
    return s_new


def step(state: FieldState, bc: BoundarySpec, params: RegularizationParams,
         control: StepControl, gas: thermo.GasModel, tr: transport_mod.TransportModel,
         forcing: Optional[Forcing] = None, dt: Optional[float] = None):
    """Advance one accepted time step; returns (state', dt_used, step_report).

    dt is chosen from the CFL signal speeds (sound, Alfven, flow) and, for
    explicit diffusion, the diffusion numbers; positivity failures halve dt
    up to ``control.max_halvings``.  All FieldState invariants are
    re-established on the returned state.
    """
    explicit_diff = control.diffusion_treatment == "explicit"
    s0 = apply_boundaries(state, bc, state.t)
    if dt is None:
        dt = _signal_dt(s0, gas, tr, params, control, include_diffusion=explicit_diff)
        dt = min(dt, control.dt_max)
    halvings = 0

    while True:
        if dt < 1e-14 * control.dt_max:
            raise CFLCollapse(f"time step collapsed to {dt:.3e}")
        try:
            new_state = _try_step(s0, bc, params, control, gas, tr, forcing, dt)
            break
        except PositivityFailure:
            halvings += 1
            if halvings > control.max_halvings:
                raise
            dt *= 0.5

    new_state = apply_boundaries(new_state, bc, new_state.t)
    report = _step_report(new_state, gas, tr, dt)
    return new_state, dt, report


# -- collocated diagnostics helpers ---------------------------------------------------


def cell_velocity_gradient(state: FieldState) -> np.ndarray:
    """Velocity gradient tensor collocated at cells, shape (*cells, 3, 3)."""
    if state.ghosts is None:
        raise ValueError("apply boundaries before requesting gradients")
    g = state.grid
    uxp, uyp, uzp = state.ghosts.u_p
    ux, uy, uz = state.u
    G = np.zeros((*g.cell_shape(), 3, 3))
    G[..., 0, 0] = _diff(ux, 0, g.hx)
    G[..., 1, 1] = _diff(uy, 1, g.hy)
    G[..., 2, 2] = _diff(uz, 2, g.hz)
    G[..., 0, 1] = _avg(_avg(_diff(uxp[1:-1, :, 1:-1], 1, g.hy), 0), 1)
    G[..., 1, 0] = _avg(_avg(_diff(uyp[:, 1:-1, 1:-1], 0, g.hx), 0), 1)
    G[..., 0, 2] = _avg(_avg(_diff(uxp[1:-1, 1:-1, :], 2, g.hz), 0), 2)
    G[..., 2, 0] = _avg(_avg(_diff(uzp[:, 1:-1, 1:-1], 0, g.hx), 0), 2)
    G[..., 1, 2] = _avg(_avg(_diff(uyp[1:-1, 1:-1, :], 2, g.hz), 1), 2)
    G[..., 2, 1] = _avg(_avg(_diff(uzp[1:-1, :, 1:-1], 1, g.hy), 1), 2)
    return G


def cell_current(state: FieldState) -> np.ndarray:
    """curl B collocated at cells, shape (*cells, 3)."""
    g = state.grid
    jx, jy, jz = g.ops().curl_face_to_edge(*state.ghosts.b_p)
    return np.stack([
        _avg(_avg(jx, 1), 2),
        _avg(_avg(jy, 0), 2),
        _avg(_avg(jz, 0), 1),
    ], axis=-1)


def cell_grad_theta(state: FieldState) -> np.ndarray:
    g = state.grid
    tp = state.ghosts.theta_p
    gx = _avg(_diff(tp[:, 1:-1, 1:-1], 0, g.hx), 0)
    gy = _avg(_diff(tp[1:-1, :, 1:-1], 1, g.hy), 1)
    gz = _avg(_diff(tp[1:-1, 1:-1, :], 2, g.hz), 2)
    return np.stack([gx, gy, gz], axis=-1)


def cell_velocity(state: FieldState) -> np.ndarray:
    return np.stack([_avg(state.ux, 0), _avg(state.uy, 1), _avg(state.uz, 2)], axis=-1)


def cell_bfield(state: FieldState) -> np.ndarray:
    return np.stack([_avg(state.bx, 0), _avg(state.by, 1), _avg(state.bz, 2)], axis=-1)


def _step_report(state: FieldState, gas, tr, dt) -> dict:
    G = cell_velocity_gradient(state)
    J = cell_current(state)
    gth = cell_grad_theta(state)
    sigma = transport_mod.entropy_production_density(tr, state.theta, G, gth, J)
    return {
        "t": state.t,
        "dt": dt,
        "min_rho": float(np.min(state.rho)),
        "min_theta": float(np.min(state.theta)),
        "max_u": state.max_speed(),
        "max_b": max(float(np.max(np.abs(c))) for c in state.b),
        "divb_max": float(np.max(np.abs(state.div_b()))),
        "divb_defect": state.solenoidal_defect(),
        "sigma_min": float(np.min(sigma)),
    }


def induction_step(state: FieldState, bc: BoundarySpec, dt: float,
                   zeta=None, tr: Optional[transport_mod.TransportModel] = None,
                   emf_forcing=None) -> FieldState:
    """Constrained-transport update of B alone (test mode; u, rho, theta frozen).

    ``zeta`` may be an explicit constant (including 0) overriding the
    transport law; the velocity field contributes the advective EMF but is
    not evolved.
    """
    st = state if state.ghosts is not None else apply_boundaries(state, bc, state.t)
    g = st.grid
    ops = g.ops()
    gh = st.ghosts
    uxp, uyp, uzp = gh.u_p
    bxp, byp, bzp = gh.b_p
    jx, jy, jz = ops.curl_face_to_edge(bxp, byp, bzp)

    emf = [
        _avg(byp[1:-1, 1:-1, :], 2) * _avg(uzp[1:-1, :, 1:-1], 1)
        - _avg(bzp[1:-1, :, 1:-1], 1) * _avg(uyp[1:-1, 1:-1, :], 2),
        _avg(bzp[:, 1:-1, 1:-1], 0) * _avg(uxp[1:-1, 1:-1, :], 2)
        - _avg(bxp[1:-1, 1:-1, :], 2) * _avg(uzp[:, 1:-1, 1:-1], 0),
        _avg(bxp[1:-1, :, 1:-1], 1) * _avg(uyp[:, 1:-1, 1:-1], 0)
        - _avg(byp[:, 1:-1, 1:-1], 0) * _avg(uxp[1:-1, :, 1:-1], 1),
    ]
    if zeta is not None:
        emf = [e + zeta * j for e, j in zip(emf, (jx, jy, jz))]
    elif tr is not None:
        emf = [e + tr.zeta(t_) * j
               for e, t_, j in zip(emf, _edge_theta(g, gh.theta_p), (jx, jy, jz))]
    if emf_forcing is not None:
        emf = [e + f for e, f in zip(emf, emf_forcing(st.t, g))]
    if bc.magnetic_bc is MagneticBC.NORMAL_FLUX_ZERO_EMF:
        _zero_wall_edges(g, emf)

    dbx, dby, dbz = ops.curl_edge_to_face(*emf)
    out = st.copy()
    out.bx = st.bx - dt * dbx
    out.by = st.by - dt * dby
    out.bz = st.bz - dt * dbz
    out.t = st.t + dt
    sync_periodic(g, (out.bx, out.by, out.bz))
    return apply_boundaries(out, bc, out.t)
