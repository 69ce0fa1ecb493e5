"""Mimetic differential operators on a staggered (Yee/MAC) box grid.

Layout for an ``nx x ny x nz`` cell grid with spacings ``hx, hy, hz``:

    cell fields              (nx, ny, nz)        centers (i+1/2, j+1/2, k+1/2)
    x/y/z face-normal fields (nx+1, ny, nz) ...  normal components on faces
    x/y/z edge fields        (nx, ny+1, nz+1)... components along edges

The operators are built so that the discrete vector-calculus structure holds
exactly: ``divergence(curl_edge_to_face(E)) = 0`` in exact arithmetic, the
two curls are mutually adjoint up to boundary terms, and gradient/divergence
satisfy discrete integration by parts.  Energy manipulations of the solver
and diagnostics then hold discretely up to boundary quadrature.

Face and edge inputs that require neighbor values across cell boundaries are
passed *padded by one ghost layer per axis*; the ghost policy (mirror,
Dirichlet trace, periodic, zero) is owned by the caller (see mhdbox.grid).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["OperatorSet", "colocated_curl", "colocated_div", "sbp_report"]


@dataclass(frozen=True)
class OperatorSet:
    """Staggered operators bound to a grid's cell counts and spacings."""

    n: tuple[int, int, int]
    h: tuple[float, float, float]

    @classmethod
    def for_grid(cls, grid) -> "OperatorSet":
        return cls(n=tuple(grid.n_cells), h=(grid.hx, grid.hy, grid.hz))

    # -- first-order mimetic operators ---------------------------------------

    def divergence(self, fx: np.ndarray, fy: np.ndarray, fz: np.ndarray) -> np.ndarray:
        """Flux-difference divergence, faces -> cells.  Exact for linear fields."""
        hx, hy, hz = self.h
        return (
            (fx[1:, :, :] - fx[:-1, :, :]) / hx
            + (fy[:, 1:, :] - fy[:, :-1, :]) / hy
            + (fz[:, :, 1:] - fz[:, :, :-1]) / hz
        )

    def gradient(self, cp: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gradient, padded cells -> faces.

        ``cp`` has one ghost layer per side and axis, shape (nx+2, ny+2, nz+2);
        boundary-face values follow from the ghosts.
        """
        hx, hy, hz = self.h
        gx = (cp[1:, 1:-1, 1:-1] - cp[:-1, 1:-1, 1:-1]) / hx
        gy = (cp[1:-1, 1:, 1:-1] - cp[1:-1, :-1, 1:-1]) / hy
        gz = (cp[1:-1, 1:-1, 1:] - cp[1:-1, 1:-1, :-1]) / hz
        return gx, gy, gz

    def laplacian(self, cp: np.ndarray) -> np.ndarray:
        """Cell Laplacian as divergence of the ghost-defined gradient."""
        return self.divergence(*self.gradient(cp))

    def curl_face_to_edge(self, bxp, byp, bzp):
        """Circulation curl, faces -> edges.

        Inputs are face fields padded by one layer per axis:
        bxp (nx+3, ny+2, nz+2), byp (nx+2, ny+3, nz+2), bzp (nx+2, ny+2, nz+3).
        Only tangential ghosts are consumed.
        """
        hx, hy, hz = self.h
        # strip the normal-axis padding
        bx = bxp[1:-1, :, :]
        by = byp[:, 1:-1, :]
        bz = bzp[:, :, 1:-1]
        ex = (bz[1:-1, 1:, :] - bz[1:-1, :-1, :]) / hy - (by[1:-1, :, 1:] - by[1:-1, :, :-1]) / hz
        ey = (bx[:, 1:-1, 1:] - bx[:, 1:-1, :-1]) / hz - (bz[1:, 1:-1, :] - bz[:-1, 1:-1, :]) / hx
        ez = (by[1:, :, 1:-1] - by[:-1, :, 1:-1]) / hx - (bx[:, 1:, 1:-1] - bx[:, :-1, 1:-1]) / hy
        return ex, ey, ez

    def curl_edge_to_face(self, ex, ey, ez):
        """Circulation curl, edges -> faces.  divergence∘curl vanishes exactly."""
        hx, hy, hz = self.h
        fx = (ez[:, 1:, :] - ez[:, :-1, :]) / hy - (ey[:, :, 1:] - ey[:, :, :-1]) / hz
        fy = (ex[:, :, 1:] - ex[:, :, :-1]) / hz - (ez[1:, :, :] - ez[:-1, :, :]) / hx
        fz = (ey[1:, :, :] - ey[:-1, :, :]) / hx - (ex[:, 1:, :] - ex[:, :-1, :]) / hy
        return fx, fy, fz

    # -- inner products -------------------------------------------------------

    @property
    def cell_volume(self) -> float:
        hx, hy, hz = self.h
        return hx * hy * hz

    def cell_inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(a * b) * self.cell_volume)

    def face_inner(self, a, b) -> float:
        """Inner product of face fields; interior faces carry full cell weight.

        Physical-boundary faces carry half weight, which is immaterial for the
        compactly supported fields used in the adjointness checks.
        """
        v = self.cell_volume
        total = 0.0
        for f, g in zip(a, b):
            w = np.ones_like(f)
            # halve the weight of the two extremal layers along the normal axis
            axis = [i for i, (sf, n) in enumerate(zip(f.shape, self.n)) if sf == n + 1][0]
            sl_lo = [slice(None)] * 3
            sl_hi = [slice(None)] * 3
            sl_lo[axis] = 0
            sl_hi[axis] = -1
            w[tuple(sl_lo)] = 0.5
            w[tuple(sl_hi)] = 0.5
            total += float(np.sum(w * f * g) * v)
        return total

    def edge_inner(self, a, b) -> float:
        v = self.cell_volume
        total = 0.0
        for f, g in zip(a, b):
            w = np.ones_like(f)
            for axis, (sf, n) in enumerate(zip(f.shape, self.n)):
                if sf == n + 1:
                    sl_lo = [slice(None)] * 3
                    sl_hi = [slice(None)] * 3
                    sl_lo[axis] = 0
                    sl_hi[axis] = -1
                    w[tuple(sl_lo)] *= 0.5
                    w[tuple(sl_hi)] *= 0.5
            total += float(np.sum(w * f * g) * v)
        return total


# -- colocated centered operators (identity checks) ---------------------------


def _central_diff(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Centered difference with zero extension beyond the array ends."""
    fp = np.zeros_like(f)
    fm = np.zeros_like(f)
    sl_f = [slice(None)] * f.ndim
    sl_t = [slice(None)] * f.ndim
    sl_f[axis] = slice(1, None)
    sl_t[axis] = slice(None, -1)
    fp[tuple(sl_t)] = f[tuple(sl_f)]
    fm[tuple(sl_f)] = f[tuple(sl_t)]
    return (fp - fm) / (2.0 * h)


def colocated_curl(v: np.ndarray, h: tuple[float, float, float]) -> np.ndarray:
    """Centered-difference curl of a cell vector field (..., 3).

    Adjoint to itself under the plain cell sum for fields vanishing near the
    array boundary, which makes integral curl identities exact discretely.
    """
    hx, hy, hz = h
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    cx = _central_diff(vz, 1, hy) - _central_diff(vy, 2, hz)
    cy = _central_diff(vx, 2, hz) - _central_diff(vz, 0, hx)
    cz = _central_diff(vy, 0, hx) - _central_diff(vx, 1, hy)
    return np.stack([cx, cy, cz], axis=-1)


def colocated_div(v: np.ndarray, h: tuple[float, float, float]) -> np.ndarray:
    """Centered-difference divergence of a cell vector field (..., 3)."""
    hx, hy, hz = h
    return (
        _central_diff(v[..., 0], 0, hx)
        + _central_diff(v[..., 1], 1, hy)
        + _central_diff(v[..., 2], 2, hz)
    )


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.cross(a, b, axis=-1)


def magnetic_identity_residual(u, U, B, H, h) -> float:
    """Relative residual of the integral curl identity used for field differences.

    For interior-supported cell vector fields, the identity

        sum[ -(curl B x B).U + (curl H x H).(U-u) + (B-H).curl(H x U)
             + (B x u).curl H ]
      = sum[ (U x (B-H)).curl(B-H) + ((U-u) x (B-H)).curl H
             + div((B-H) x (H x U)) ]

    holds to rounding because every step is either pointwise algebra or a
    summation-by-parts move whose boundary terms vanish.
    """
    curl = lambda f: colocated_curl(f, h)  # noqa: E731
    W = B - H
    lhs_terms = [
        np.sum(-_cross(curl(B), B) * U),
        np.sum(_cross(curl(H), H) * (U - u)),
        np.sum(W * curl(_cross(H, U))),
        np.sum(_cross(B, u) * curl(H)),
    ]
    rhs_terms = [
        np.sum(_cross(U, W) * curl(W)),
        np.sum(_cross(U - u, W) * curl(H)),
        np.sum(colocated_div(_cross(W, _cross(H, U)), h)),
    ]
    lhs = sum(lhs_terms)
    rhs = sum(rhs_terms)
    # normalize by the largest participating term so that cancellations at
    # coinciding arguments are judged against the sizes actually summed
    scale = max(max(abs(t) for t in lhs_terms + rhs_terms), 1e-30)
    return abs(lhs - rhs) / scale


# -- verification report -------------------------------------------------------


def _interior_mask(shape, margin: int) -> np.ndarray:
    m = np.zeros(shape)
    sl = tuple(slice(margin, s - margin) for s in shape[:3])
    m[sl] = 1.0
    return m


def _random_cell_vec(rng, n, margin=3):
    v = rng.standard_normal(size=(*n, 3))
    return v * _interior_mask((*n, 1), margin)


def sbp_report(ops: OperatorSet, trials: int, seed: int = 0) -> dict:
    """Max integration-by-parts residuals over random interior-supported fields.

    Covers div/grad adjointness, mutual adjointness of the two curls, the
    exactness of divergence∘curl, and the integral curl identity for field
    differences evaluated with colocated centered operators.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    nx, ny, nz = ops.n

    def zero_margin(arr, margin=2):
        out = np.zeros_like(arr)
        sl = tuple(slice(margin, s - margin) for s in arr.shape)
        out[sl] = arr[sl]
        return out

    res_divgrad = 0.0
    res_curl = 0.0
    res_divcurl = 0.0
    res_identity = 0.0

    for _ in range(trials):
        # div/grad adjointness: <div v, phi> + <v, grad phi> = 0 for interior v
        phi = zero_margin(rng.standard_normal((nx, ny, nz)))
        v = (
            zero_margin(rng.standard_normal((nx + 1, ny, nz))),
            zero_margin(rng.standard_normal((nx, ny + 1, nz))),
            zero_margin(rng.standard_normal((nx, ny, nz + 1))),
        )
        phip = np.pad(phi, 1)
        lhs = ops.cell_inner(ops.divergence(*v), phi)
        rhs = ops.face_inner(v, ops.gradient(phip))
        scale = max(abs(lhs), abs(rhs), 1e-30)
        res_divgrad = max(res_divgrad, abs(lhs + rhs) / scale)

        # curl adjointness: <curl_fe b, e> - <b, curl_ef e> = 0
        b = (
            zero_margin(rng.standard_normal((nx + 1, ny, nz))),
            zero_margin(rng.standard_normal((nx, ny + 1, nz))),
            zero_margin(rng.standard_normal((nx, ny, nz + 1))),
        )
        e = (
            zero_margin(rng.standard_normal((nx, ny + 1, nz + 1))),
            zero_margin(rng.standard_normal((nx + 1, ny, nz + 1))),
            zero_margin(rng.standard_normal((nx + 1, ny + 1, nz))),
        )
        bp = tuple(np.pad(c, 1) for c in b)
        lhs = ops.edge_inner(ops.curl_face_to_edge(*bp), e)
        rhs = ops.face_inner(b, ops.curl_edge_to_face(*e))
        scale = max(abs(lhs), abs(rhs), 1e-30)
        res_curl = max(res_curl, abs(lhs - rhs) / scale)

        # divergence of an edge curl vanishes identically
        f = ops.curl_edge_to_face(*e)
        d = ops.divergence(*f)
        fscale = max(float(np.max(np.abs(np.concatenate([c.ravel() for c in f])))), 1e-30)
        res_divcurl = max(res_divcurl, float(np.max(np.abs(d))) * min(ops.h) / fscale)

        # integral curl identity on colocated interior-supported fields
        uu = _random_cell_vec(rng, ops.n)
        UU = _random_cell_vec(rng, ops.n)
        BB = _random_cell_vec(rng, ops.n)
        HH = _random_cell_vec(rng, ops.n)
        res_identity = max(res_identity, magnetic_identity_residual(uu, UU, BB, HH, ops.h))

    return {
        "trials": trials,
        "div_grad_adjointness": res_divgrad,
        "curl_adjointness": res_curl,
        "div_of_curl": res_divcurl,
        "magnetic_identity": res_identity,
        "max_residual": max(res_divgrad, res_curl, res_divcurl, res_identity),
    }
