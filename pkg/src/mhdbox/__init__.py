"""Staggered-grid compressible MHD simulator with weak-solution diagnostics.

The package couples a finite-volume solver for the compressible
magnetohydrodynamic equations (monoatomic gas with radiation pressure,
temperature-dependent transport coefficients, imposed background magnetic
field, Dirichlet boundary temperature) to a diagnostics layer that evaluates
entropy production, ballistic-energy balances, relative (Bregman) energies
and weak-form residuals on simulation histories.
"""

from mhdbox.thermo import GasModel, ThermoPoint, eos_eval
from mhdbox.transport import TransportModel
from mhdbox.grid import BoxGrid, FieldState, BoundarySpec, MagneticBC
from mhdbox.solver import RegularizationParams, StepControl, step

__all__ = [
    "GasModel",
    "ThermoPoint",
    "eos_eval",
    "TransportModel",
    "BoxGrid",
    "FieldState",
    "BoundarySpec",
    "MagneticBC",
    "RegularizationParams",
    "StepControl",
    "step",
]

__version__ = "0.1.0"
