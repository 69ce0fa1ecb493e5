"""Solver right-hand sides and time stepping against analytic oracles."""

import numpy as np
import pytest

from conftest import make_bc, profile_x, uniform_state
from mhdbox.grid import BoxGrid, MagneticBC, apply_boundaries
from mhdbox.solver import (
    CFLCollapse,
    PositivityFailure,
    RegularizationParams,
    StepControl,
    induction_step,
    rhs_continuity,
    rhs_internal_energy,
    rhs_momentum,
    step,
)

from mhdbox.transport import TransportModel

PARAMS0 = RegularizationParams()


def test_continuity_zero_for_static_uniform(small_grid, gas, transport_small, slip_bc):
    st = apply_boundaries(uniform_state(small_grid), slip_bc, 0.0)
    r = rhs_continuity(st, slip_bc, PARAMS0, gas, transport_small)
    assert np.max(np.abs(r)) == 0.0


def test_continuity_parabolic_regularization_oracle(gas, transport_small):
    # u = 0, cosine density profile: rhs = eps * discrete laplacian exactly
    g = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(32, 4, 4))
    bc = make_bc()
    st = uniform_state(g)
    st.rho = profile_x(g, lambda x: 1.0 + 0.1 * np.cos(np.pi * x), "cell")
    st = apply_boundaries(st, bc, 0.0)
    params = RegularizationParams(eps=1e-2)
    r = rhs_continuity(st, bc, params, gas, transport_small)
    kh = 2.0 * np.sin(np.pi * g.hx / 2.0) / g.hx  # discrete mode of the mirror stencil
    expected = -1e-2 * kh**2 * (st.rho - 1.0)
    assert np.max(np.abs(r - expected)) <= 1e-12 * np.max(np.abs(expected))


def test_continuity_conserves_mass(small_grid, gas, transport_small, slip_bc):
    rng = np.random.default_rng(0)
    st = uniform_state(small_grid)
    st.rho += 0.2 * rng.random(small_grid.cell_shape())
    st.ux = 0.1 * rng.standard_normal(small_grid.face_shape(0))
    st.uy = 0.1 * rng.standard_normal(small_grid.face_shape(1))
    st = apply_boundaries(st, slip_bc, 0.0)
    r = rhs_continuity(st, slip_bc, RegularizationParams(eps=1e-2), gas, transport_small)
    assert abs(np.sum(r) * small_grid.cell_volume) <= 1e-14


def test_momentum_hydrostatic_balance(small_grid, gas, transport_small, slip_bc):
    st = apply_boundaries(uniform_state(small_grid), slip_bc, 0.0)
    rm = rhs_momentum(st, slip_bc, PARAMS0, gas, transport_small)
    for comp in rm:
        assert np.max(np.abs(comp)) == 0.0


def test_momentum_magnetic_pressure_oracle(gas, transport_small):
    # B = (0, 0, B0(x)), u = 0: x-force = -d/dx(B0^2/2) to second order
    g = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(64, 4, 4))

    def b0(x):
        return 0.5 + 0.2 * np.sin(2.0 * np.pi * x)

    bc = make_bc(bb=(0.0, 0.0, 0.0))
    bc.B_B = lambda t, x, y, z: (0.0 * x + 0.0 * y + 0.0 * z, 0.0 * x + 0.0 * y + 0.0 * z,
                                 b0(x) + 0.0 * y + 0.0 * z)
    st = uniform_state(g)
    st.bz = profile_x(g, b0, "zface")
    st = apply_boundaries(st, bc, 0.0)
    rm = rhs_momentum(st, bc, PARAMS0, gas, transport_small)
    xf = g.face_coords(0)[1:-1]
    exact = -b0(xf) * 0.2 * 2.0 * np.pi * np.cos(2.0 * np.pi * xf)
    got = rm[0][1:-1, 2, 2]
    assert np.max(np.abs(got - exact)) <= 2e-3 * np.max(np.abs(exact))


def test_momentum_delta_pressure_uniform_has_no_gradient(small_grid, gas,
                                                         transport_small, slip_bc):
    # uniform rho = 2: p_delta - p = delta (4 + 2^Gamma) is constant, so the
    # momentum tendency is unchanged by delta
    st = apply_boundaries(uniform_state(small_grid, rho0=2.0), slip_bc, 0.0)
    r0 = rhs_momentum(st, slip_bc, PARAMS0, gas, transport_small)
    r1 = rhs_momentum(st, slip_bc, RegularizationParams(delta=0.3, Gamma=4.0),
                      gas, transport_small)
    for a, b in zip(r0, r1):
        assert np.max(np.abs(a - b)) <= 1e-12


def test_induction_static_in_test_mode(small_grid, slip_bc):
    st = apply_boundaries(uniform_state(small_grid, b=(0.2, 0.0, 0.0)), slip_bc, 0.0)
    out = induction_step(st, slip_bc, dt=1e-3, zeta=0.0)
    assert np.array_equal(out.bx, st.bx)
    assert np.array_equal(out.by, st.by)


def test_resistive_decay_rate_oracle():
    # scalar diffusion of a single transverse mode: rate = zeta * k^2 + O(h^2)
    n = 64
    g = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(n, 4, 4), periodic=(False, True, True))
    bc = make_bc(variant=MagneticBC.NORMAL_FLUX_ZERO_EMF)
    k = np.pi
    st = uniform_state(g)
    st.bz = profile_x(g, lambda x: 0.1 * np.cos(k * x), "zface")
    st = apply_boundaries(st, bc, 0.0)
    zeta = 0.05
    dt = 0.2 * min(g.h) ** 2 / zeta
    proj = np.cos(k * g.cell_coords(0))
    a0 = float((st.bz[:, 2, 2] * proj).sum())
    s = st
    for _ in range(400):
        s = induction_step(s, bc, dt, zeta=zeta)
    a1 = float((s.bz[:, 2, 2] * proj).sum())
    rate = -np.log(a1 / a0) / s.t
    assert rate == pytest.approx(zeta * k**2, rel=5e-4)


def test_constrained_transport_solenoidal(small_grid):
    rng = np.random.default_rng(1)
    pot = tuple(rng.standard_normal(small_grid.edge_shape(c)) for c in range(3))
    b = small_grid.ops().curl_edge_to_face(*pot)
    st = uniform_state(small_grid)
    st.bx, st.by, st.bz = (0.1 * c for c in b)
    for c in range(3):
        setattr(st, "u" + "xyz"[c], 0.05 * rng.standard_normal(small_grid.face_shape(c)))
    bc = make_bc()
    st = apply_boundaries(st, bc, 0.0)
    tr = TransportModel(mu0=1e-3, kappa0=1e-3, zeta0=1e-2)
    s = st
    for _ in range(200):
        s = induction_step(s, bc, 2e-4, tr=tr)
    assert s.solenoidal_defect() <= 1e-12


def test_internal_energy_equilibrium_zero(small_grid, gas, transport_small):
    bc = make_bc(theta_b=1.0, bb=(0.3, 0.0, 0.0))
    st = apply_boundaries(uniform_state(small_grid, b=(0.3, 0.0, 0.0)), bc, 0.0)
    r = rhs_internal_energy(st, bc, PARAMS0, gas, transport_small)
    assert np.max(np.abs(r)) == 0.0


def test_internal_energy_regularization_sources(small_grid, gas, transport_small):
    # same equilibrium with eps, delta > 0 and theta = 1: rhs = delta - eps
    bc = make_bc()
    st = apply_boundaries(uniform_state(small_grid), bc, 0.0)
    params = RegularizationParams(eps=2e-3, delta=5e-3)
    r = rhs_internal_energy(st, bc, params, gas, transport_small)
    assert np.max(np.abs(r - (5e-3 - 2e-3))) <= 1e-15


def test_internal_energy_dissipation_nonnegative(small_grid, gas, slip_bc):
    # dissipation channels evaluated on random states stay sign-definite
    rng = np.random.default_rng(2)
    tr = TransportModel(mu0=0.3, eta0=0.1, kappa0=0.2, zeta0=0.4)
    from mhdbox.solver import _assemble, StepControl as SC
    for trial in range(5):
        st = uniform_state(small_grid)
        st.rho += 0.3 * rng.random(small_grid.cell_shape())
        st.theta += 0.3 * rng.random(small_grid.cell_shape())
        for c in range(3):
            setattr(st, "u" + "xyz"[c], 0.2 * rng.standard_normal(small_grid.face_shape(c)))
            setattr(st, "b" + "xyz"[c], 0.2 * rng.standard_normal(small_grid.face_shape(c)))
        st = apply_boundaries(st, slip_bc, 0.0)
        out = _assemble(st, slip_bc, PARAMS0, gas, tr, SC())
        assert np.all(out["q_visc"] >= 0.0)
        assert np.all(out["q_joule"] >= 0.0)


def test_step_equilibrium_fixed_point(small_grid, gas, transport_small):
    bc = make_bc(theta_b=1.0, bb=(0.2, 0.0, 0.0))
    st = uniform_state(small_grid, b=(0.2, 0.0, 0.0))
    s = st
    ctl = StepControl(cfl=0.4)
    for _ in range(25):
        s, dt, rep = step(s, bc, PARAMS0, ctl, gas, transport_small)
    assert np.max(np.abs(s.rho - 1.0)) <= 1e-13
    assert np.max(np.abs(s.theta - 1.0)) <= 1e-13
    assert s.max_speed() <= 1e-13
    assert np.max(np.abs(s.bx - 0.2)) <= 1e-13
    assert rep["sigma_min"] >= 0.0


def test_step_report_and_invariants(small_grid, gas, transport_small, slip_bc):
    rng = np.random.default_rng(3)
    st = uniform_state(small_grid)
    st.ux[1:-1] = 0.05 * rng.standard_normal((7, 8, 8))
    s, dt, rep = step(st, slip_bc, PARAMS0, StepControl(), gas, transport_small)
    assert rep["dt"] == dt
    assert rep["min_rho"] > 0.0
    assert rep["sigma_min"] >= 0.0
    assert rep["divb_defect"] <= 1e-12
    assert s.validate() == []


def test_step_mass_conservation(small_grid, gas, transport_small, slip_bc):
    rng = np.random.default_rng(4)
    st = uniform_state(small_grid)
    st.rho += 0.2 * rng.random(small_grid.cell_shape())
    st.ux[1:-1] = 0.1 * rng.standard_normal((7, 8, 8))
    m0 = float(np.sum(st.rho))
    s = st
    for _ in range(10):
        m_prev = float(np.sum(s.rho))
        s, dt, rep = step(s, slip_bc, RegularizationParams(eps=1e-3), StepControl(),
                          gas, transport_small)
        assert abs(float(np.sum(s.rho)) - m_prev) <= 1e-12 * m0


def test_step_positivity_failure_raises(small_grid, gas, transport_small, slip_bc):
    st = uniform_state(small_grid)
    st.theta[:] = 1e-12  # essentially no internal energy to draw on
    st.ux[1:-1] = 5.0
    with pytest.raises((PositivityFailure, CFLCollapse)):
        s = st
        for _ in range(40):
            s, _, _ = step(s, slip_bc, PARAMS0, StepControl(max_halvings=2, cfl=0.9),
                           gas, transport_small)


def test_heun_scheme_available(small_grid, gas, slip_bc):
    tr = TransportModel(mu0=5e-2, eta0=0.0, kappa0=5e-2, zeta0=5e-2)
    st = uniform_state(small_grid)
    st.ux[1:-1] = 0.01
    ctl = StepControl(time_scheme="heun", cfl=0.3)
    s, dt, rep = step(st, slip_bc, PARAMS0, ctl, gas, tr)
    assert rep["min_theta"] > 0.0


def test_lagged_implicit_matches_explicit_decay(gas):
    # heat-equation decay: implicit and explicit treatments agree to O(dt)
    g = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(16, 4, 4))
    bc = make_bc(theta_b=1.0)
    tr = TransportModel(mu0=1e-4, eta0=0.0, kappa0=5e-2, zeta0=1e-4)
    st = uniform_state(g)
    st.theta = profile_x(g, lambda x: 1.0 + 0.05 * np.sin(np.pi * x), "cell")

    results = {}
    for treatment in ("explicit", "lagged_implicit"):
        s = st.copy()
        ctl = StepControl(diffusion_treatment=treatment, cfl=0.3)
        for _ in range(100):
            s, dt, _ = step(s, bc, PARAMS0, ctl, gas, tr, dt=2e-4)
        results[treatment] = s.theta.copy()
    diff = np.max(np.abs(results["explicit"] - results["lagged_implicit"]))
    amp = np.max(np.abs(st.theta - 1.0))
    assert diff <= 0.02 * amp


def test_donor_advection_mode(small_grid, gas, transport_small, slip_bc):
    st = uniform_state(small_grid)
    st.ux[1:-1] = 0.05
    ctl = StepControl(advection="donor")
    s, _, rep = step(st, slip_bc, PARAMS0, ctl, gas, transport_small)
    assert rep["min_rho"] > 0.0


def test_entropy_production_nonnegative_random_run(small_grid, gas, slip_bc):
    rng = np.random.default_rng(5)
    tr = TransportModel(mu0=1e-2, eta0=1e-2, kappa0=1e-2, zeta0=1e-2)
    st = uniform_state(small_grid)
    st.rho += 0.2 * rng.random(small_grid.cell_shape())
    st.theta += 0.2 * rng.random(small_grid.cell_shape())
    for c in range(3):
        arr = getattr(st, "u" + "xyz"[c])
        sl = [slice(None)] * 3
        sl[c] = slice(1, -1)
        arr[tuple(sl)] = 0.1 * rng.standard_normal(arr[tuple(sl)].shape)
    pot = tuple(rng.standard_normal(small_grid.edge_shape(c)) for c in range(3))
    b = small_grid.ops().curl_edge_to_face(*pot)
    st.bx, st.by, st.bz = (0.05 * c for c in b)
    s = st
    for _ in range(20):
        s, _, rep = step(s, slip_bc, PARAMS0, StepControl(cfl=0.3), gas, tr)
        assert rep["sigma_min"] >= 0.0
        assert rep["divb_defect"] <= 1e-12
