"""Temperature-dependent transport coefficients and constitutive fluxes.

Coefficient family (single-coefficient version of the standard two-sided
bounds, so the pointwise bounds hold with equality):

    mu(theta)    = mu0    * (1 + theta^alpha),   1/2 <= alpha <= 1
    eta(theta)   = eta0   * (1 + theta^alpha)
    kappa(theta) = kappa0 * (1 + theta^beta),    beta >= 3
    zeta(theta)  = zeta0  * (1 + theta)

alpha = 1/2 is the Sutherland exponent; beta = 3 reflects radiative
conduction.  The viscous stress is Newtonian,

    S(theta, G) = mu (G + G^T - (2/3) tr(G) I) + eta tr(G) I,

the heat flux is Fourier, q = -kappa grad(theta), and the entropy production
density combines the three dissipation channels weighted by 1/theta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TransportModel",
    "coefficients",
    "viscous_stress",
    "heat_flux",
    "entropy_production_density",
]

_SIGMA_TOL = 1e-13


class TransportDomainError(ValueError):
    """Raised for non-positive temperatures."""


class ConstitutiveSignError(RuntimeError):
    """Raised when a computed entropy production is significantly negative."""


@dataclass(frozen=True)
class TransportModel:
    """Base coefficients and exponents of the transport laws."""

    mu0: float = 1.0
    eta0: float = 0.0
    kappa0: float = 1.0
    zeta0: float = 1.0
    alpha: float = 0.5
    beta: float = 3.0

    def __post_init__(self) -> None:
        if self.mu0 <= 0.0:
            raise ValueError("transport.mu0 must be positive")
        if self.eta0 < 0.0:
            raise ValueError("transport.eta0 must be non-negative")
        if self.kappa0 <= 0.0:
            raise ValueError("transport.kappa0 must be positive")
        if self.zeta0 <= 0.0:
            raise ValueError("transport.zeta0 must be positive")
        if not (0.5 <= self.alpha <= 1.0):
            raise ValueError("transport.alpha must lie in [1/2, 1]")
        if self.beta < 3.0:
            raise ValueError("transport.beta must be >= 3")

    def mu(self, theta):
        return self.mu0 * (1.0 + np.asarray(theta, dtype=float) ** self.alpha)

    def eta(self, theta):
        return self.eta0 * (1.0 + np.asarray(theta, dtype=float) ** self.alpha)

    def kappa(self, theta):
        return self.kappa0 * (1.0 + np.asarray(theta, dtype=float) ** self.beta)

    def zeta(self, theta):
        return self.zeta0 * (1.0 + np.asarray(theta, dtype=float))


def _check_theta(theta):
    arr = np.asarray(theta, dtype=float)
    if not np.all(arr > 0.0):
        raise TransportDomainError("theta must be positive")
    return arr


def coefficients(model: TransportModel, theta):
    """Return (mu, eta, kappa, zeta) at the given temperature(s)."""
    th = _check_theta(theta)
    return model.mu(th), model.eta(th), model.kappa(th), model.zeta(th)


def viscous_stress(model: TransportModel, theta, G) -> np.ndarray:
    """Newtonian stress tensor for a velocity gradient G (3x3, or batched ...x3x3)."""
    th = _check_theta(theta)
    G = np.asarray(G, dtype=float)
    sym2 = G + np.swapaxes(G, -1, -2)  # = 2 * sym(G)
    tr = np.trace(G, axis1=-2, axis2=-1)
    eye = np.eye(3)
    mu = np.asarray(model.mu(th))[..., None, None]
    eta = np.asarray(model.eta(th))[..., None, None]
    trI = tr[..., None, None] * eye
    return mu * (sym2 - (2.0 / 3.0) * trI) + eta * trI


def heat_flux(model: TransportModel, theta, grad_theta) -> np.ndarray:
    """Fourier heat flux q = -kappa(theta) grad(theta)."""
    th = _check_theta(theta)
    g = np.asarray(grad_theta, dtype=float)
    return -np.asarray(model.kappa(th))[..., None] * g


def shear_dissipation(model: TransportModel, theta, G, extra_dev_coeff=0.0):
    """S : G computed as a manifestly non-negative quadratic form.

    Algebraically S:G = 2 mu |dev sym G|^2 + eta (tr G)^2; evaluating the
    quadratic form directly keeps the result >= 0 under rounding.
    ``extra_dev_coeff`` adds to the deviatoric coefficient (used by the
    delta-augmented stress of the regularized scheme).
    """
    th = _check_theta(theta)
    G = np.asarray(G, dtype=float)
    sym = 0.5 * (G + np.swapaxes(G, -1, -2))
    tr = np.trace(G, axis1=-2, axis2=-1)
    dev = sym - (tr[..., None, None] / 3.0) * np.eye(3)
    dev2 = np.sum(dev * dev, axis=(-2, -1))
    mu = model.mu(th) + extra_dev_coeff
    return 2.0 * mu * dev2 + model.eta(th) * tr**2


def entropy_production_density(model: TransportModel, theta, G, grad_theta, curlB):
    """Entropy production sigma = (S:G - q.grad(theta)/theta + zeta |curl B|^2) / theta.

    Each channel is evaluated as a non-negative quadratic form, so the result
    is non-negative for every admissible input.  A significantly negative
    value can only arise from a constitutive bug and raises.
    """
    th = _check_theta(theta)
    g = np.asarray(grad_theta, dtype=float)
    j = np.asarray(curlB, dtype=float)
    visc = shear_dissipation(model, th, G)
    cond = model.kappa(th) * np.sum(g * g, axis=-1) / th
    joule = model.zeta(th) * np.sum(j * j, axis=-1)
    sigma = (visc + cond + joule) / th
    scale = 1.0 + np.max(np.abs(sigma)) if np.size(sigma) else 1.0
    if np.any(sigma < -_SIGMA_TOL * scale):
        raise ConstitutiveSignError("negative entropy production encountered")
    return sigma
