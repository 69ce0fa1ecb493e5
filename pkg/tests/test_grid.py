"""Grid layout, boundary enforcement, projection, checkpoint round-trips."""

import numpy as np
import pytest

from conftest import make_bc, uniform_state
from mhdbox.grid import (
    BoxGrid,
    ConfigurationError,
    FieldState,
    MagneticBC,
    apply_boundaries,
    initial_divergence_cleaning,
    load_checkpoint,
    save_checkpoint,
    _neumann_pad,
)


def test_grid_validation():
    with pytest.raises(ValueError):
        BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(3, 8, 8))
    with pytest.raises(ValueError):
        BoxGrid(extents=(0.0, 1.0, 1.0), n_cells=(8, 8, 8))
    g = BoxGrid(extents=(2.0, 1.0, 1.0), n_cells=(8, 4, 4))
    assert g.hx == pytest.approx(0.25)
    assert g.cell_volume == pytest.approx(0.25 * 0.25 * 0.25)


def test_fieldstate_shape_validation(small_grid):
    with pytest.raises(ValueError, match="rho"):
        FieldState(grid=small_grid, rho=np.ones((4, 4, 4)),
                   theta=np.ones(small_grid.cell_shape()),
                   ux=np.zeros(small_grid.face_shape(0)),
                   uy=np.zeros(small_grid.face_shape(1)),
                   uz=np.zeros(small_grid.face_shape(2)),
                   bx=np.zeros(small_grid.face_shape(0)),
                   by=np.zeros(small_grid.face_shape(1)),
                   bz=np.zeros(small_grid.face_shape(2)))


def test_apply_boundaries_identity_on_compatible_data(small_grid):
    bc = make_bc(theta_b=2.0, bb=(0.3, 0.0, 0.0))
    st = uniform_state(small_grid, theta0=2.0, b=(0.3, 0.0, 0.0))
    out = apply_boundaries(st, bc, 0.0)
    assert np.array_equal(out.rho, st.rho)
    assert np.array_equal(out.theta, st.theta)
    assert np.array_equal(out.bx, st.bx)
    # ghost values continue the compatible data smoothly
    assert np.allclose(out.ghosts.theta_p, 2.0)
    assert np.allclose(out.ghosts.b_p[0], 0.3)


def test_theta_ghost_linear_extrapolation(small_grid):
    bc = make_bc(theta_b=2.0)
    st = uniform_state(small_grid, theta0=1.0)
    out = apply_boundaries(st, bc, 0.0)
    assert np.allclose(out.ghosts.theta_p[0, 1:-1, 1:-1], 3.0)
    assert np.allclose(out.ghosts.theta_p[-1, 1:-1, 1:-1], 3.0)


def test_normal_velocity_zeroed_exactly(small_grid):
    rng = np.random.default_rng(0)
    st = uniform_state(small_grid)
    st.ux = rng.standard_normal(small_grid.face_shape(0))
    out = apply_boundaries(st, make_bc(), 0.0)
    assert np.all(out.ux[0] == 0.0)
    assert np.all(out.ux[-1] == 0.0)
    assert out.validate() == []


def test_apply_boundaries_idempotent(small_grid):
    rng = np.random.default_rng(1)
    st = uniform_state(small_grid)
    st.uy = rng.standard_normal(small_grid.face_shape(1))
    bc = make_bc(theta_b=1.7, bb=(0.1, 0.2, 0.0))
    once = apply_boundaries(st, bc, 0.3)
    twice = apply_boundaries(once, bc, 0.3)
    for name in ("rho", "theta", "ux", "uy", "uz", "bx", "by", "bz"):
        assert np.array_equal(getattr(once, name), getattr(twice, name))
    assert np.array_equal(once.ghosts.theta_p, twice.ghosts.theta_p)


def test_nonpositive_boundary_temperature_rejected(small_grid):
    st = uniform_state(small_grid)
    with pytest.raises(ConfigurationError):
        apply_boundaries(st, make_bc(theta_b=-1.0), 0.0)


def test_normal_flux_variant_pins_normal_trace(small_grid):
    bc = make_bc(bb=(0.4, 0.0, 0.0), variant=MagneticBC.NORMAL_FLUX_ZERO_EMF)
    st = uniform_state(small_grid)
    st.bx += 1.0  # incompatible interior data
    out = apply_boundaries(st, bc, 0.0)
    assert np.allclose(out.bx[0], 0.4)
    assert np.allclose(out.bx[-1], 0.4)


def test_cleaning_annihilates_gradients(small_grid):
    ops = small_grid.ops()
    rng = np.random.default_rng(2)
    psi = rng.standard_normal(small_grid.cell_shape())
    grad = ops.gradient(_neumann_pad(small_grid, psi))
    out = initial_divergence_cleaning(small_grid, grad)
    assert max(np.max(np.abs(c)) for c in out) <= 1e-10 * max(
        np.max(np.abs(c)) for c in grad)


def test_cleaning_preserves_solenoidal_fields(small_grid):
    ops = small_grid.ops()
    rng = np.random.default_rng(3)
    e = tuple(rng.standard_normal(small_grid.edge_shape(c)) for c in range(3))
    sol = ops.curl_edge_to_face(*e)
    out = initial_divergence_cleaning(small_grid, sol)
    assert max(np.max(np.abs(a - b)) for a, b in zip(out, sol)) <= 1e-12


def test_cleaning_helmholtz_split(small_grid):
    ops = small_grid.ops()
    rng = np.random.default_rng(4)
    e = tuple(rng.standard_normal(small_grid.edge_shape(c)) for c in range(3))
    sol = ops.curl_edge_to_face(*e)
    psi = rng.standard_normal(small_grid.cell_shape())
    grad = ops.gradient(_neumann_pad(small_grid, psi))
    mixed = tuple(s + g for s, g in zip(sol, grad))
    out = initial_divergence_cleaning(small_grid, mixed)
    scale = max(np.max(np.abs(c)) for c in sol)
    assert max(np.max(np.abs(a - b)) for a, b in zip(out, sol)) <= 1e-10 * scale


def test_cleaning_idempotent(small_grid):
    rng = np.random.default_rng(5)
    raw = list(rng.standard_normal(small_grid.face_shape(c)) for c in range(3))
    for c, arr in enumerate(raw):
        # zero wall-normal components so the input carries no net flux
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[c] = 0
        sl_hi[c] = -1
        arr[tuple(sl_lo)] = 0.0
        arr[tuple(sl_hi)] = 0.0
    once = initial_divergence_cleaning(small_grid, tuple(raw))
    twice = initial_divergence_cleaning(small_grid, once)
    scale = max(np.max(np.abs(c)) for c in once)
    assert max(np.max(np.abs(a - b)) for a, b in zip(once, twice)) <= 1e-11 * scale


def test_cleaning_rejects_net_flux_input(small_grid):
    from mhdbox.grid import NumericalError
    fx = np.ones(small_grid.face_shape(0))
    fx[1:-1] = 0.0  # inflow at one wall only
    fy = np.zeros(small_grid.face_shape(1))
    fz = np.zeros(small_grid.face_shape(2))
    fx[0] = 1.0
    fx[-1] = 0.0
    with pytest.raises(NumericalError, match="flux"):
        initial_divergence_cleaning(small_grid, (fx, fy, fz))


def test_checkpoint_roundtrip(tmp_path, small_grid):
    rng = np.random.default_rng(6)
    st = uniform_state(small_grid)
    st.rho += 0.1 * rng.standard_normal(small_grid.cell_shape())
    st.uy = rng.standard_normal(small_grid.face_shape(1))
    st.t = 0.7754
    path = tmp_path / "state.mhdb"
    save_checkpoint(path, st)
    back = load_checkpoint(path)
    assert back.t == st.t
    assert back.grid.extents == small_grid.extents
    for name in ("rho", "theta", "ux", "uy", "uz", "bx", "by", "bz"):
        assert np.array_equal(getattr(back, name), getattr(st, name))


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_validate_reports_violations(small_grid):
    st = uniform_state(small_grid)
    st.rho[0, 0, 0] = -1.0
    st.ux[0, 2, 2] = 0.5
    bad = st.validate()
    assert any("rho" in m for m in bad)
    assert any("normal component" in m for m in bad)


def test_periodic_axis_aliases():
    g = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(8, 4, 4), periodic=(False, True, True))
    st = uniform_state(g)
    rng = np.random.default_rng(7)
    st.uy = rng.standard_normal(g.face_shape(1))
    out = apply_boundaries(st, make_bc(), 0.0)
    assert np.array_equal(out.uy[:, 0, :], out.uy[:, -1, :])
