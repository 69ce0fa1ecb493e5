"""Equation of state for a monoatomic gas with radiation pressure.

The molecular part of the pressure has the scaling-invariant form

    p_M(rho, theta) = theta^(5/2) * P(rho / theta^(3/2)),
    e_M(rho, theta) = (3/2) * (theta^(5/2) / rho) * P(rho / theta^(3/2)),

so that p_M = (2/3) rho e_M (monoatomic relation), while radiation
contributes p_R = (a/3) theta^4 and e_R = a theta^4 / rho.  The structural
function used here is the two-parameter family

    P(Z) = c1 * Z + p_inf * Z^(5/3),    c1 > 0, p_inf >= 0,

which is strictly increasing, has P(0) = 0, satisfies the degenerate-gas
limit P(Z)/Z^(5/3) -> p_inf, and admits a closed-form entropy:
(5/3) P(Z) - P'(Z) Z = (2/3) c1 Z exactly, hence the molecular entropy is

    s_M = S(Z) = -c1 * log(Z) + s0,     Z = rho / theta^(3/2),

and the radiation entropy is s_R = (4a/3) theta^3 / rho.  All partial
derivatives are evaluated analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GasModel",
    "ThermoPoint",
    "eos_eval",
    "gibbs_residual",
    "hypothesis_report",
    "sound_speed_squared",
]


class ThermoDomainError(ValueError):
    """Raised when density or temperature leave the admissible domain."""


@dataclass(frozen=True)
class GasModel:
    """Coefficients of the equation of state.

    c1     linear coefficient of the structural function P (must be > 0)
    p_inf  degenerate-gas limit coefficient of P (>= 0)
    a      radiation constant (>= 0)
    s0     additive normalization of the molecular entropy
    """

    c1: float = 1.0
    p_inf: float = 0.0
    a: float = 0.0
    s0: float = 0.0

    def __post_init__(self) -> None:
        if self.c1 <= 0.0:
            raise ValueError("gas.c1 must be positive")
        if self.p_inf < 0.0:
            raise ValueError("gas.p_inf must be non-negative")
        if self.a < 0.0:
            raise ValueError("gas.a must be non-negative")

    # -- structural function -------------------------------------------------

    def P(self, Z):
        """Structural function P(Z) = c1 Z + p_inf Z^(5/3)."""
        Z = np.asarray(Z, dtype=float)
        return self.c1 * Z + self.p_inf * Z ** (5.0 / 3.0)

    def dP(self, Z):
        """Derivative P'(Z)."""
        Z = np.asarray(Z, dtype=float)
        return self.c1 + (5.0 / 3.0) * self.p_inf * Z ** (2.0 / 3.0)

    def structural_defect_ratio(self, Z):
        """((5/3) P(Z) - P'(Z) Z) / Z, evaluated in closed form.

        For this family the ratio is identically (2/3) c1; returning the
        closed form avoids catastrophic cancellation at large Z.
        """
        Z = np.asarray(Z, dtype=float)
        return np.full_like(Z, (2.0 / 3.0) * self.c1)

    def S(self, Z):
        """Molecular entropy function S(Z) = -c1 log Z + s0."""
        Z = np.asarray(Z, dtype=float)
        return -self.c1 * np.log(Z) + self.s0


@dataclass(frozen=True)
class ThermoPoint:
    """Full thermodynamic state at one or many (rho, theta) samples.

    Scalar inputs give scalar fields; array inputs give arrays of the same
    shape.  Molecular and radiation contributions are stored separately so
    that the monoatomic relation p_M = (2/3) rho e_M can be inspected.
    """

    rho: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    e: np.ndarray
    s: np.ndarray
    dp_drho: np.ndarray
    dp_dtheta: np.ndarray
    de_dtheta: np.ndarray
    de_drho: np.ndarray
    ds_drho: np.ndarray
    ds_dtheta: np.ndarray
    p_M: np.ndarray = field(repr=False, default=None)
    e_M: np.ndarray = field(repr=False, default=None)
    p_R: np.ndarray = field(repr=False, default=None)
    e_R: np.ndarray = field(repr=False, default=None)
    s_M: np.ndarray = field(repr=False, default=None)
    s_R: np.ndarray = field(repr=False, default=None)


def _check_positive(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(arr > 0.0):
        raise ThermoDomainError(f"{name} must be positive everywhere")
    return arr


def eos_eval(gas: GasModel, rho, theta) -> ThermoPoint:
    """Evaluate pressure, internal energy, entropy and their derivatives.

    Pure and deterministic; accepts scalars or numpy arrays (broadcast).
    Raises ThermoDomainError when rho or theta are not strictly positive.
    """
    rho = _check_positive("rho", rho)
    theta = _check_positive("theta", theta)
    rho, theta = np.broadcast_arrays(rho, theta)
    rho = rho.astype(float)
    theta = theta.astype(float)

    c1, p_inf, a = gas.c1, gas.p_inf, gas.a
    Z = rho / theta**1.5

    # molecular part, written out for the default P family; the monoatomic
    # relation p_M = (2/3) rho e_M is enforced bit-exactly by construction
    e_M = 1.5 * c1 * theta + 1.5 * p_inf * rho ** (2.0 / 3.0)
    p_M = (2.0 / 3.0) * rho * e_M
    s_M = gas.S(Z)

    # radiation part
    p_R = (a / 3.0) * theta**4
    e_R = a * theta**4 / rho
    s_R = (4.0 * a / 3.0) * theta**3 / rho

    p = p_M + p_R
    e = e_M + e_R
    s = s_M + s_R

    dp_drho = c1 * theta + (5.0 / 3.0) * p_inf * rho ** (2.0 / 3.0)
    dp_dtheta = c1 * rho + (4.0 * a / 3.0) * theta**3
    de_dtheta = 1.5 * c1 + 4.0 * a * theta**3 / rho
    de_drho = p_inf * rho ** (-1.0 / 3.0) - a * theta**4 / rho**2
    ds_drho = -c1 / rho - (4.0 * a / 3.0) * theta**3 / rho**2
    ds_dtheta = 1.5 * c1 / theta + 4.0 * a * theta**2 / rho

    return ThermoPoint(
        rho=rho, theta=theta, p=p, e=e, s=s,
        dp_drho=dp_drho, dp_dtheta=dp_dtheta,
        de_dtheta=de_dtheta, de_drho=de_drho,
        ds_drho=ds_drho, ds_dtheta=ds_dtheta,
        p_M=p_M, e_M=e_M, p_R=p_R, e_R=e_R, s_M=s_M, s_R=s_R,
    )


def sound_speed_squared(gas: GasModel, rho, theta):
    """Adiabatic sound speed squared, c^2 = p_rho + theta p_theta^2 / (rho^2 e_theta)."""
    pt = eos_eval(gas, rho, theta)
    return pt.dp_drho + pt.theta * pt.dp_dtheta**2 / (pt.rho**2 * pt.de_dtheta)


def gibbs_residual(gas: GasModel, rho: float, theta: float, h: float):
    """Finite-difference residual of the Gibbs relation theta ds = de + p d(1/rho).

    Returns the pair

        (theta * ds/dtheta - de/dtheta,
         theta * ds/drho  - de/drho + p / rho^2),

    both evaluated with central differences of step ``h`` applied to the
    closed-form entropy/energy from :func:`eos_eval`.  Both components vanish
    identically for the analytic state functions; the returned values are pure
    truncation error, second order in ``h``.
    """
    rho = float(rho)
    theta = float(theta)
    if rho <= 0.0 or theta <= 0.0:
        raise ThermoDomainError("rho and theta must be positive")
    if h <= 0.0 or h >= min(rho, theta) / 2.0:
        raise ValueError("step h must satisfy 0 < h < min(rho, theta)/2")

    center = eos_eval(gas, rho, theta)
    th_p = eos_eval(gas, rho, theta + h)
    th_m = eos_eval(gas, rho, theta - h)
    rh_p = eos_eval(gas, rho + h, theta)
    rh_m = eos_eval(gas, rho - h, theta)

    ds_dth = (th_p.s - th_m.s) / (2.0 * h)
    de_dth = (th_p.e - th_m.e) / (2.0 * h)
    ds_drh = (rh_p.s - rh_m.s) / (2.0 * h)
    de_drh = (rh_p.e - rh_m.e) / (2.0 * h)

    res_theta = theta * ds_dth - de_dth
    res_rho = theta * ds_drh - de_drh + center.p / rho**2
    return float(res_theta), float(res_rho)


def hypothesis_report(gas: GasModel, z_grid) -> dict:
    """Check the structural hypotheses on P and the stability signs.

    Per grid point the report records: positivity of P', positivity and
    boundedness of the structural defect ((5/3)P - P'Z)/Z, monotone decay of
    P(Z)/Z^(5/3), and the estimated degenerate-gas limit.  Thermodynamic
    stability (dp/drho > 0, de/dtheta > 0) is sampled on an induced
    (rho, theta) grid.  The third-law flag reports whether S(Z) -> 0 as
    Z -> infinity; the default logarithmic family violates it, which is
    admissible for constant boundary temperatures.
    """
    z = np.asarray(z_grid, dtype=float)
    if z.size == 0:
        raise ValueError("z_grid must be non-empty")
    if np.any(z <= 0.0):
        raise ValueError("z_grid entries must be positive")
    if np.any(np.diff(z) <= 0.0) and z.size > 1:
        raise ValueError("z_grid must be ascending")

    defect = gas.structural_defect_ratio(z)
    ratio = gas.P(z) / z ** (5.0 / 3.0)
    dP = gas.dP(z)

    rows = []
    for i in range(z.size):
        mono = True
        if i > 0:
            mono = ratio[i] <= ratio[i - 1] + 1e-15 * abs(ratio[i - 1])
        rows.append({
            "Z": float(z[i]),
            "P_prime_positive": bool(dP[i] > 0.0),
            "defect_positive": bool(defect[i] > 0.0),
            "defect_bounded": bool(np.isfinite(defect[i])),
            "defect_ratio": float(defect[i]),
            "p_ratio": float(ratio[i]),
            "p_ratio_monotone": bool(mono),
        })

    limit_estimate = float(ratio[-1])
    limit_ok = True
    if gas.p_inf > 0.0:
        limit_ok = abs(limit_estimate - gas.p_inf) <= 0.05 * gas.p_inf + gas.c1 * z[-1] ** (-2.0 / 3.0) * 1.5

    # stability signs on an induced (rho, theta) grid covering the Z range
    thetas = np.geomspace(1e-1, 1e1, 7)
    stability_ok = True
    for th in thetas:
        rhos = np.clip(z * th**1.5, 1e-12, None)
        pt = eos_eval(gas, rhos, np.full_like(rhos, th))
        stability_ok = stability_ok and bool(np.all(pt.dp_drho > 0.0)) and bool(np.all(pt.de_dtheta > 0.0))

    # S(Z) = -c1 log Z + s0 diverges to -inf, so the third law fails for
    # any c1 > 0 regardless of the normalization s0.
    third_law = False

    report = {
        "rows": rows,
        "P_zero_at_origin": bool(gas.P(np.array([0.0]))[0] == 0.0),
        "monotone_P": bool(all(r["P_prime_positive"] for r in rows)),
        "defect_in_range": bool(all(r["defect_positive"] and r["defect_bounded"] for r in rows)),
        "p_ratio_decreasing": bool(all(r["p_ratio_monotone"] for r in rows)),
        "limit_estimate": limit_estimate,
        "limit_consistent": bool(limit_ok),
        "stability_signs": bool(stability_ok),
        "third_law": third_law,
    }
    report["all_structural_ok"] = bool(
        report["P_zero_at_origin"]
        and report["monotone_P"]
        and report["defect_in_range"]
        and report["p_ratio_decreasing"]
        and report["limit_consistent"]
        and report["stability_signs"]
    )
    return report
