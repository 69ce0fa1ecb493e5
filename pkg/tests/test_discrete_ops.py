"""Mimetic operator identities: exactness, adjointness, curl structure."""

import numpy as np
import pytest

from mhdbox.discrete_ops import (
    OperatorSet,
    magnetic_identity_residual,
    sbp_report,
)
from mhdbox.grid import BoxGrid


@pytest.fixture
def ops():
    return OperatorSet(n=(8, 8, 8), h=(1.0 / 8, 1.0 / 8, 1.0 / 8))


def _linear_faces(grid):
    fx = np.broadcast_to(grid.face_coords(0)[:, None, None], grid.face_shape(0)).copy()
    fy = np.broadcast_to(grid.face_coords(1)[None, :, None], grid.face_shape(1)).copy()
    fz = np.broadcast_to(grid.face_coords(2)[None, None, :], grid.face_shape(2)).copy()
    return fx, fy, fz


def test_divergence_constant_field(ops):
    fx = np.ones((9, 8, 8))
    fy = np.ones((8, 9, 8))
    fz = np.ones((8, 8, 9))
    assert np.max(np.abs(ops.divergence(fx, fy, fz))) == 0.0


def test_divergence_linear_exact():
    grid = BoxGrid(extents=(1.0, 2.0, 0.5), n_cells=(8, 6, 10))
    ops = grid.ops()
    d = ops.divergence(*_linear_faces(grid))
    assert np.max(np.abs(d - 3.0)) < 1e-12


def test_div_of_edge_curl_vanishes(ops):
    rng = np.random.default_rng(0)
    e = (rng.standard_normal((8, 9, 9)), rng.standard_normal((9, 8, 9)),
         rng.standard_normal((9, 9, 8)))
    f = ops.curl_edge_to_face(*e)
    fmax = max(np.max(np.abs(c)) for c in f)
    assert np.max(np.abs(ops.divergence(*f))) * min(ops.h) <= 1e-13 * fmax


def test_curl_linear_rotation_exact():
    grid = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(8, 8, 8))
    ops = grid.ops()
    X0, Y0, _ = grid.face_mesh(0)
    X1, Y1, _ = grid.face_mesh(1)
    bx = np.broadcast_to(-Y0, grid.face_shape(0)).copy()
    by = np.broadcast_to(X1, grid.face_shape(1)).copy()
    bz = np.zeros(grid.face_shape(2))
    pads = tuple(np.pad(c, 1, mode="edge") for c in (bx, by, bz))
    ex, ey, ez = ops.curl_face_to_edge(*pads)
    assert np.max(np.abs(ez[1:-1, 1:-1, :] - 2.0)) < 1e-12
    assert np.max(np.abs(ex[:, 1:-1, 1:-1])) < 1e-12
    assert np.max(np.abs(ey[1:-1, :, 1:-1])) < 1e-12


def test_curl_of_gradient_small_interior():
    grid = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(16, 16, 16))
    ops = grid.ops()
    X, Y, Z = grid.cell_mesh()
    phi = np.broadcast_to(np.sin(np.pi * X) * np.sin(np.pi * Y) * np.sin(np.pi * Z),
                          grid.cell_shape()).copy()
    g = ops.gradient(np.pad(phi, 1, mode="edge"))
    pads = tuple(np.pad(c, 1, mode="edge") for c in g)
    ex, ey, ez = ops.curl_face_to_edge(*pads)
    # gradient fields sampled on faces are curl-free to truncation order
    interior = max(np.max(np.abs(ex[:, 2:-2, 2:-2])), np.max(np.abs(ey[2:-2, :, 2:-2])),
                   np.max(np.abs(ez[2:-2, 2:-2, :])))
    assert interior < 0.2  # O(h^2) * pi^3 scale at 16 cells


def test_sbp_report_residuals(ops):
    rep = sbp_report(ops, trials=4, seed=2)
    assert rep["div_grad_adjointness"] <= 1e-12
    assert rep["curl_adjointness"] <= 1e-12
    assert rep["div_of_curl"] <= 1e-12
    assert rep["magnetic_identity"] <= 1e-12


def test_sbp_report_single_cell_impulse(ops):
    # impulse fields exercise the same identities with minimal support
    nx, ny, nz = ops.n
    phi = np.zeros((nx, ny, nz))
    phi[4, 4, 4] = 1.0
    v = (np.zeros((nx + 1, ny, nz)), np.zeros((nx, ny + 1, nz)), np.zeros((nx, ny, nz + 1)))
    v[0][4, 4, 4] = 1.0
    lhs = ops.cell_inner(ops.divergence(*v), phi)
    rhs = ops.face_inner(v, ops.gradient(np.pad(phi, 1)))
    assert abs(lhs + rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1.0)


def test_magnetic_identity_random_and_coinciding():
    rng = np.random.default_rng(3)
    n = (10, 10, 10)
    h = (0.1, 0.1, 0.1)

    def interior(x):
        out = np.zeros_like(x)
        out[3:-3, 3:-3, 3:-3] = x[3:-3, 3:-3, 3:-3]
        return out

    u = interior(rng.standard_normal((*n, 3)))
    U = interior(rng.standard_normal((*n, 3)))
    B = interior(rng.standard_normal((*n, 3)))
    H = interior(rng.standard_normal((*n, 3)))
    assert magnetic_identity_residual(u, U, B, H, h) <= 1e-12
    # coinciding arguments (H = B, U = u) reduce both sides identically
    assert magnetic_identity_residual(u, u, B, B, h) <= 1e-12


def test_sbp_report_rejects_bad_trials(ops):
    with pytest.raises(ValueError):
        sbp_report(ops, trials=0)
