import numpy as np
import pytest

from mhdbox.grid import BoundarySpec, BoxGrid, FieldState, MagneticBC, apply_boundaries
from mhdbox.thermo import GasModel
from mhdbox.transport import TransportModel


def uniform_state(grid, rho0=1.0, theta0=1.0, b=(0.0, 0.0, 0.0)):
    return FieldState(
        grid=grid,
        rho=np.full(grid.cell_shape(), rho0),
        theta=np.full(grid.cell_shape(), theta0),
        ux=np.zeros(grid.face_shape(0)),
        uy=np.zeros(grid.face_shape(1)),
        uz=np.zeros(grid.face_shape(2)),
        bx=np.full(grid.face_shape(0), b[0]),
        by=np.full(grid.face_shape(1), b[1]),
        bz=np.full(grid.face_shape(2), b[2]),
    )


def profile_x(grid, fn, target):
    """Broadcast a 1D x-profile onto a cell or face array.

    target: "cell" | "xface" | "yface" | "zface".  The profile is sampled at
    the x-coordinate of the target layout (faces for "xface", centers else).
    """
    shapes = {"cell": grid.cell_shape(), "xface": grid.face_shape(0),
              "yface": grid.face_shape(1), "zface": grid.face_shape(2)}
    coords = grid.face_coords(0) if target == "xface" else grid.cell_coords(0)
    vals = fn(coords)
    return np.broadcast_to(vals[:, None, None], shapes[target]).copy()


@pytest.fixture
def small_grid():
    return BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(8, 8, 8))


@pytest.fixture
def gas():
    return GasModel(c1=1.0, p_inf=0.0, a=0.0, s0=0.0)


@pytest.fixture
def full_gas():
    return GasModel(c1=1.0, p_inf=0.5, a=0.3, s0=0.2)


@pytest.fixture
def transport_unit():
    return TransportModel(mu0=1.0, eta0=1.0, kappa0=1.0, zeta0=1.0, alpha=0.5, beta=3.0)


@pytest.fixture
def transport_small():
    return TransportModel(mu0=1e-3, eta0=0.0, kappa0=1e-3, zeta0=1e-3)


@pytest.fixture
def slip_bc():
    return BoundarySpec(theta_b=1.0)


def applied(state, bc, t=0.0):
    return apply_boundaries(state, bc, t)


def make_bc(theta_b=1.0, bb=(0.0, 0.0, 0.0), variant=MagneticBC.TANGENTIAL_DIRICHLET,
            g=(0.0, 0.0, 0.0)):
    return BoundarySpec(theta_b=theta_b, B_B=bb, g=g, magnetic_bc=variant)
