"""Acceptance suite: one test per primary criterion, at stated tolerances.

Every test prints a single [PASS] line naming the criterion (visible with
``pytest -s tests/test_acceptance.py``); the assertions pin the tolerances.
Desk scale throughout: grids up to 32^3 (one 128-cell quasi-1D pair for the
wave physics), total runtime a few minutes.
"""


import numpy as np
import pytest

from conftest import make_bc, profile_x, uniform_state
from mhdbox import diagnostics as dg
from mhdbox.cli import main as cli_main
from mhdbox.config import parse_config
from mhdbox.discrete_ops import magnetic_identity_residual, sbp_report
from mhdbox.grid import (
    BoxGrid,
    MagneticBC,
    apply_boundaries,
    initial_divergence_cleaning,
)
from mhdbox.solver import (
    RegularizationParams,
    StepControl,
    induction_step,
    step,
)
from mhdbox.thermo import GasModel, eos_eval, gibbs_residual, hypothesis_report
from mhdbox.transport import TransportModel, entropy_production_density
from mhdbox.verification import (
    make_reference,
    regularization_limit_study,
    weak_strong_experiment,
)

PARAMS0 = RegularizationParams()


def _report(name: str, detail: str = "") -> None:
    print(f"[PASS] {name}" + (f"  ({detail})" if detail else ""), flush=True)


# -- criterion: Gibbs relation ---------------------------------------------------


def test_acceptance_gibbs_relation():
    gas = GasModel(c1=1.0, p_inf=0.4, a=0.3, s0=0.1)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        rho = rng.uniform(0.1, 10.0)
        theta = rng.uniform(0.1, 10.0)
        r1, r2 = gibbs_residual(gas, rho, theta, 1e-5)
        e = float(eos_eval(gas, rho, theta).e)
        tol = 1e-6 * (1.0 + abs(e))
        assert abs(r1) <= tol and abs(r2) <= tol
        worst = max(worst, abs(r1) / tol, abs(r2) / tol)
    # second-order decay under h-halving at a generic point
    coarse = gibbs_residual(gas, 1.7, 0.9, 2e-2)
    fine = gibbs_residual(gas, 1.7, 0.9, 1e-2)
    for c, f in zip(coarse, fine):
        assert 3.2 <= abs(c) / abs(f) <= 4.8
    _report("Gibbs relation residual <= 1e-6 (1+|e|), second-order in h",
            f"worst residual fraction {worst:.2e}")


# -- criterion: structural hypotheses of the state equation --------------------------


def test_acceptance_state_equation_hypotheses():
    gas = GasModel(c1=1.0, p_inf=1.0, a=0.5)
    rep = hypothesis_report(gas, np.geomspace(1e-4, 1e4, 81))
    assert rep["all_structural_ok"]
    for row in rep["rows"]:
        assert row["defect_ratio"] == 2.0 / 3.0
    _report("state-equation hypotheses hold on Z in [1e-4, 1e4]; defect = 2/3 exactly")


# -- criterion: entropy production non-negative -----------------------------------------


def _builtin_configs():
    profiles = [
        ("equilibrium", {}),
        ("acoustic", {"initial.amplitude": "0.02"}),
        ("alfven", {"initial.amplitude": "0.01", "initial.b0": "1.0",
                    "boundary.bb_x": "1.0", "initial.mode": "2"}),
        ("family_a", {"initial.b0": "0.2"}),
        ("family_b", {"initial.amplitude": "0.1",
                      "transport.mu0": "1e-2", "transport.zeta0": "1e-2"}),
        ("family_c", {"initial.amplitude": "0.2",
                      "boundary.magnetic_bc": "normal_flux"}),
        ("random_solenoidal", {"initial.amplitude": "0.05"}),
    ]
    for profile, extra in profiles:
        overrides = {"grid.nx": "10", "grid.ny": "10", "grid.nz": "10",
                     "initial.profile": profile, "control.max_steps": "8"}
        overrides.update(extra)
        yield profile, parse_config(None, overrides)


def test_acceptance_entropy_production_nonnegative():
    from mhdbox.cli import build_initial_state

    for profile, cfg in _builtin_configs():
        rng = np.random.default_rng(cfg.seed)
        state, grid, bc = build_initial_state(cfg, rng)
        s = state
        for _ in range(cfg.max_steps):
            s, _, rep = step(s, bc, cfg.regularization, cfg.control, cfg.gas,
                             cfg.transport)
            assert rep["sigma_min"] >= 0.0, profile

    model = TransportModel(mu0=0.7, eta0=0.2, kappa0=0.5, zeta0=0.9)
    rng = np.random.default_rng(11)
    n = 100000
    sigma = entropy_production_density(
        model, rng.uniform(0.05, 10.0, n), rng.standard_normal((n, 3, 3)),
        rng.standard_normal((n, 3)), rng.standard_normal((n, 3)))
    assert np.all(sigma >= 0.0)
    _report("entropy production >= 0 at every cell of every accepted step "
            "and on 1e5 random pointwise inputs")


# -- criterion: solenoidality under constrained transport ------------------------------------


def test_acceptance_solenoidality_1000_steps():
    grid = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(16, 16, 16))
    rng = np.random.default_rng(5)
    pot = tuple(rng.standard_normal(grid.edge_shape(c)) for c in range(3))
    raw = grid.ops().curl_edge_to_face(*pot)
    b = initial_divergence_cleaning(grid, tuple(0.2 * c for c in raw))
    st = uniform_state(grid)
    st.bx, st.by, st.bz = (c.copy() for c in b)
    for c in range(3):
        setattr(st, "u" + "xyz"[c], 0.05 * rng.standard_normal(grid.face_shape(c)))
    bc = make_bc()
    st = apply_boundaries(st, bc, 0.0)
    tr = TransportModel(mu0=1e-3, kappa0=1e-3, zeta0=1e-2)
    s = st
    for _ in range(1000):
        s = induction_step(s, bc, 2e-4, tr=tr)
    defect = s.solenoidal_defect()
    assert defect <= 1e-12
    _report("div B defect <= 1e-12 after 1000 randomized induction steps at 16^3",
            f"defect {defect:.2e}")


# -- criterion: conservative-limit total energy balance -----------------------------------


def test_acceptance_conservative_energy_drift():
    gas = GasModel()
    tr = TransportModel(mu0=1e-5, eta0=0.0, kappa0=1e-5, zeta0=1e-5)
    bc = make_bc(theta_b=1.0)
    drift = {}
    for n in (16, 32):
        grid = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(n, n, n))
        st = uniform_state(grid)
        st.ux = profile_x(grid, lambda x: 0.05 * np.sin(np.pi * x), "xface")
        e0 = dg.total_energy(st, gas)
        s = st
        ctl = StepControl(cfl=0.4)
        for _ in range(100):
            s, _, _ = step(s, bc, PARAMS0, ctl, gas, tr)
        drift[n] = abs(dg.total_energy(s, gas) - e0) / e0
    assert drift[16] <= 1e-3
    assert drift[32] <= drift[16] / 2.0
    _report("conservative-limit energy drift <= 1e-3 at 16^3 and >= 2x smaller at 32^3",
            f"drift 16^3 {drift[16]:.2e}, 32^3 {drift[32]:.2e}")


# -- criterion: ballistic energy inequality --------------------------------------------


def test_acceptance_ballistic_inequality():
    gas = GasModel()
    tr = TransportModel(mu0=1e-2, eta0=0.0, kappa0=1e-3, zeta0=1e-3)
    ref, _ = make_reference("B", gas, tr, amplitude=0.1)
    pos_parts = []
    abs_residuals = []
    e0_ref = None
    for n in (8, 16, 32):
        grid = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(n, n, n))
        st = apply_boundaries(ref.state(grid, 0.0), ref.bc, 0.0)
        e0 = dg.total_energy(st, gas)
        e0_ref = e0
        hist = [st.copy()]
        s = st
        ctl = StepControl(cfl=0.35)
        while s.t < 0.25 - 1e-12:
            s, _, _ = step(s, ref.bc, PARAMS0, ctl, gas, tr)
            hist.append(s.copy())
        res = dg.ballistic_balance_residual(hist, gas, tr, ref.bc)
        pos_parts.append(res["positive_part"])
        abs_residuals.append(abs(res["residual"]))
    assert pos_parts[-1] <= 1e-3 * e0_ref
    floor = 1e-12 * e0_ref
    assert all(b <= a + floor for a, b in zip(pos_parts, pos_parts[1:]))
    # the balance defect itself converges (the inequality is not vacuous)
    assert all(b < a for a, b in zip(abs_residuals, abs_residuals[1:]))
    _report("ballistic-balance positive part <= 1e-3 E0 at 32^3, monotone under "
            "refinement", f"|residual| = {['%.2e' % r for r in abs_residuals]}")


# -- criterion: relative energy --------------------------------------------------------


def test_acceptance_relative_energy():
    gas = GasModel(c1=1.0, p_inf=0.5, a=0.3, s0=0.2)
    grid = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(8, 8, 8))
    shape = grid.cell_shape()
    ref = (np.full(shape, 1.0), np.full(shape, 1.0),
           tuple(np.zeros(grid.face_shape(c)) for c in range(3)),
           tuple(np.zeros(grid.face_shape(c)) for c in range(3)))

    rng = np.random.default_rng(7)
    # non-negativity over 1e4 random state/reference pointwise pairs
    vals = dg.relative_energy_density(
        gas, rng.uniform(0.05, 8.0, 10000), rng.uniform(0.05, 8.0, 10000),
        rng.uniform(0.05, 8.0, 10000), rng.uniform(0.05, 8.0, 10000))
    assert np.all(vals >= 0.0)

    # zero at coinciding arguments
    st = uniform_state(grid)
    st.rho = rng.uniform(0.5, 2.0, shape)
    st.theta = rng.uniform(0.5, 2.0, shape)
    same = (st.rho.copy(), st.theta.copy(),
            (st.ux.copy(), st.uy.copy(), st.uz.copy()),
            (st.bx.copy(), st.by.copy(), st.bz.copy()))
    scale = dg.total_energy(st, gas)
    assert dg.relative_energy(st, same, gas) <= 1e-13 * scale

    # essential-box quadratic lower bound with a brute-force constant
    rr = np.linspace(0.5, 2.0, 161)
    tt = np.linspace(0.5, 2.0, 161)
    R, T = np.meshgrid(rr, tt, indexing="ij")
    dist2 = (R - 1.0) ** 2 + (T - 1.0) ** 2
    e_th = dg.relative_energy_density(gas, R, T, np.ones_like(R), np.ones_like(T))
    mask = dist2 > 1e-12
    c_thermo = float(np.min(e_th[mask] / dist2[mask]))
    assert c_thermo > 0.0
    c_all = 0.9 * min(c_thermo, 0.25, 0.5)  # kinetic >= rho/2 >= 1/4; magnetic = 1/2

    rho = rng.uniform(0.5, 2.0, 10000)
    theta = rng.uniform(0.5, 2.0, 10000)
    du = rng.standard_normal((10000, 3))
    db = rng.standard_normal((10000, 3))
    e_full = (0.5 * rho * np.sum(du * du, axis=-1) + 0.5 * np.sum(db * db, axis=-1)
              + dg.relative_energy_density(gas, rho, theta, np.ones_like(rho),
                                           np.ones_like(theta)))
    bound = c_all * ((rho - 1.0) ** 2 + (theta - 1.0) ** 2
                     + np.sum(du * du, axis=-1) + np.sum(db * db, axis=-1))
    assert np.all(e_full >= bound)
    _report("relative energy >= 0, zero at coinciding args, essential-box "
            "coercivity", f"calibrated constant {c_thermo:.3f}")


# -- criterion: weak-strong uniqueness -----------------------------------------------


def test_acceptance_weak_strong_family_a():
    gas = GasModel()
    tr = TransportModel(mu0=1e-2, eta0=0.0, kappa0=1e-3, zeta0=1e-2)
    rep = weak_strong_experiment("A", gas, tr, [16], t_end=0.2)
    assert rep["entries"][0]["e_rel_max"] <= 1e-12
    _report("weak-strong family A: relative energy <= 1e-12 at all times",
            f"max {rep['entries'][0]['e_rel_max']:.2e}")


@pytest.mark.parametrize("family,variant", [
    ("B", MagneticBC.TANGENTIAL_DIRICHLET),
    ("C", MagneticBC.NORMAL_FLUX_ZERO_EMF),
])
def test_acceptance_weak_strong_convergence(family, variant):
    gas = GasModel()
    tr = TransportModel(mu0=1e-2, eta0=0.0, kappa0=1e-3, zeta0=1e-2)
    rep = weak_strong_experiment(family, gas, tr, [16, 32], t_end=0.2,
                                 amplitude=0.1, magnetic_bc=variant)
    assert rep["entries"][0]["e_rel_initial"] <= 1e-30
    assert rep["fitted_order"] >= 1.0
    _report(f"weak-strong family {family}: fitted order >= 1 across 16^3 -> 32^3",
            f"order {rep['fitted_order']:.2f}, "
            f"max E_rel {[('%.2e' % e['e_rel_max']) for e in rep['entries']]}")


# -- criterion: integral curl identity -------------------------------------------------


def test_acceptance_magnetic_identity():
    ops_rep = sbp_report(BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(12, 12, 12)).ops(),
                         trials=10, seed=3)
    assert ops_rep["magnetic_identity"] <= 1e-12
    assert ops_rep["div_grad_adjointness"] <= 1e-12
    assert ops_rep["curl_adjointness"] <= 1e-12
    assert ops_rep["div_of_curl"] <= 1e-12

    # reduction at coinciding arguments
    rng = np.random.default_rng(4)
    n = (12, 12, 12)

    def interior(x):
        out = np.zeros_like(x)
        out[3:-3, 3:-3, 3:-3] = x[3:-3, 3:-3, 3:-3]
        return out

    u = interior(rng.standard_normal((*n, 3)))
    B = interior(rng.standard_normal((*n, 3)))
    res = magnetic_identity_residual(u, u, B, B, (1 / 12, 1 / 12, 1 / 12))
    assert res <= 1e-12
    _report("integral curl identity residual <= 1e-12 on interior-supported fields",
            f"max {ops_rep['magnetic_identity']:.2e}")


# -- criterion: regularization limit ---------------------------------------------------


def test_acceptance_regularization_limit():
    gas = GasModel()
    tr = TransportModel(mu0=1e-2, eta0=0.0, kappa0=1e-3, zeta0=1e-3)
    rep = regularization_limit_study(
        gas, tr, [(1e-2, 1e-2), (1e-3, 1e-3), (1e-4, 1e-4)],
        family="B", resolution=16, t_end=0.2, amplitude=0.05)
    assert rep["monotone_entropy"]
    assert rep["monotone_ballistic"]
    assert rep["monotone_distance"]
    assert rep["pass"]
    _report("regularization limit: entropy/ballistic defects and distance decrease "
            "monotonically",
            "entropy " + str(["%.2e" % e["entropy_negative_part"]
                              for e in rep["entries"]]))


# -- criterion: wave physics -----------------------------------------------------------


def _crossing_frequency(ts, vals):
    tc = []
    for i in range(len(vals) - 1):
        if vals[i] * vals[i + 1] < 0.0:
            f = vals[i] / (vals[i] - vals[i + 1])
            tc.append(ts[i] + f * (ts[i + 1] - ts[i]))
    assert len(tc) >= 3
    return 0.5 / float(np.mean(np.diff(tc)))


def test_acceptance_acoustic_frequency():
    gas = GasModel()
    tr = TransportModel(mu0=1e-5, eta0=0.0, kappa0=1e-5, zeta0=1e-5)
    bc = make_bc(theta_b=1.0)
    grid = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(128, 4, 4))
    st = uniform_state(grid)
    st.ux = profile_x(grid, lambda x: 1e-3 * np.sin(np.pi * x), "xface")
    from mhdbox.thermo import sound_speed_squared
    f_exp = float(np.sqrt(sound_speed_squared(gas, 1.0, 1.0))) / 2.0
    proj = np.sin(np.pi * grid.face_coords(0))
    s = st
    ts, mode = [], []
    ctl = StepControl(cfl=0.4)
    while s.t < 3.5 / f_exp:
        s, _, _ = step(s, bc, PARAMS0, ctl, gas, tr)
        ts.append(s.t)
        mode.append(float((s.ux[:, 2, 2] * proj).sum()))
    f_got = _crossing_frequency(ts, mode)
    rel = abs(f_got - f_exp) / f_exp
    assert rel <= 0.02
    _report("acoustic standing-wave frequency within 2% at 128 cells",
            f"relative error {rel:.2e}")


def test_acceptance_alfven_speed():
    gas = GasModel()
    tr = TransportModel(mu0=1e-4, eta0=0.0, kappa0=1e-4, zeta0=1e-4)
    bc = make_bc(theta_b=1.0, bb=(1.0, 0.0, 0.0))
    grid = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(128, 4, 4),
                   periodic=(False, True, True))
    k = 2.0 * np.pi
    st = uniform_state(grid, b=(1.0, 0.0, 0.0))
    st.uy = profile_x(grid, lambda x: 1e-3 * np.cos(k * x), "yface")
    f_exp = k / (2.0 * np.pi)  # v_A = B0 / sqrt(rho) = 1
    proj = np.cos(k * grid.cell_coords(0))
    s = st
    ts, mode = [], []
    ctl = StepControl(cfl=0.4)
    while s.t < 3.5 / f_exp:
        s, _, rep = step(s, bc, PARAMS0, ctl, gas, tr)
        ts.append(s.t)
        mode.append(float((s.uy[:, 2, 2] * proj).sum()))
    f_got = _crossing_frequency(ts, mode)
    rel = abs(f_got - f_exp) / f_exp
    assert rel <= 0.03
    assert rep["divb_defect"] <= 1e-12
    _report("Alfven phase speed within 3% at 128 cells", f"relative error {rel:.2e}")


# -- criterion: reproducibility ----------------------------------------------------------


def test_acceptance_reproducibility(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"""
[grid]
nx = 12
ny = 12
nz = 12
[initial]
profile = random_solenoidal
amplitude = 0.05
[control]
max_steps = 20
[output]
dir = {tmp_path / 'out0'}
""")
    payloads = []
    for i, workers in enumerate((1, 1, 4)):
        out = tmp_path / f"out{i}"
        rc = cli_main(["simulate", "--config", str(cfg), "--out", str(out),
                       "--seed", "1234", "--workers", str(workers)])
        assert rc == 0
        payloads.append((out / "diagnostics.csv").read_bytes())
    assert payloads[0] == payloads[1]
    assert payloads[0] == payloads[2]
    _report("bit-identical diagnostics.csv across repeated runs and worker counts 1/4")
