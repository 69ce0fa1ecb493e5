"""Run configuration: INI-style parsing, validation, and model assembly.

Sections and keys (defaults in parentheses):

  [grid]           nx, ny, nz (16), lx, ly, lz (1.0), periodic ("" | "y,z")
  [gas]            c1 (1.0), p_inf (0.0), a (0.0), s0 (0.0)
  [transport]      mu0 (1e-3), eta0 (0.0), kappa0 (1e-3), zeta0 (1e-3),
                   alpha (0.5), beta (3.0)
  [regularization] eps (0.0), delta (0.0), gamma (8.0),
                   grad_rho_variant (plain | energy)
  [boundary]       theta_b (1.0) or "gradient_x:<lo>,<hi>",
                   bb_x, bb_y, bb_z (0.0), g_x, g_y, g_z (0.0),
                   magnetic_bc (tangential_dirichlet | normal_flux)
  [initial]        profile (equilibrium | acoustic | alfven | family_a |
                   family_b | family_c | random_solenoidal | checkpoint),
                   amplitude (0.05), mode (1), rho0 (1.0), theta0 (1.0),
                   b0 (0.0), checkpoint_path
  [control]        cfl (0.4), dt_max (1.0), max_halvings (12),
                   diffusion (explicit | lagged_implicit),
                   time_scheme (ssprk3 | heun), advection (plm | donor),
                   t_end (0.0 = use max_steps), max_steps (100),
                   sample_every (1), seed (0), workers (1)
  [output]         dir ("out"), checkpoint_every (0 = none)

Environment variables named MHDBOX_<SECTION>_<KEY> override file values.
Validation is collected: every violation is reported at once with its
section.key location; some settings produce warnings instead (legal for the
solver but outside the regime in which global solvability is guaranteed).
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from mhdbox.grid import BoundarySpec, BoxGrid, MagneticBC
from mhdbox.solver import RegularizationParams, StepControl
from mhdbox.thermo import GasModel
from mhdbox.transport import TransportModel

__all__ = ["RunConfig", "ConfigValidationError", "parse_config"]

ENV_PREFIX = "MHDBOX"

_DEFAULTS = {
    "grid": {"nx": "16", "ny": "16", "nz": "16", "lx": "1.0", "ly": "1.0",
             "lz": "1.0", "periodic": ""},
    "gas": {"c1": "1.0", "p_inf": "0.0", "a": "0.0", "s0": "0.0"},
    "transport": {"mu0": "1e-3", "eta0": "0.0", "kappa0": "1e-3", "zeta0": "1e-3",
                  "alpha": "0.5", "beta": "3.0"},
    "regularization": {"eps": "0.0", "delta": "0.0", "gamma": "8.0",
                       "grad_rho_variant": "plain"},
    "boundary": {"theta_b": "1.0", "bb_x": "0.0", "bb_y": "0.0", "bb_z": "0.0",
                 "g_x": "0.0", "g_y": "0.0", "g_z": "0.0",
                 "magnetic_bc": "tangential_dirichlet"},
    "initial": {"profile": "equilibrium", "amplitude": "0.05", "mode": "1",
                "rho0": "1.0", "theta0": "1.0", "b0": "0.0", "checkpoint_path": ""},
    "control": {"cfl": "0.4", "dt_max": "1.0", "max_halvings": "12",
                "diffusion": "explicit", "time_scheme": "ssprk3",
                "advection": "plm", "t_end": "0.0", "max_steps": "100",
                "sample_every": "1", "seed": "0", "workers": "1"},
    "output": {"dir": "out", "checkpoint_every": "0"},
}

_PROFILES = ("equilibrium", "acoustic", "alfven", "family_a", "family_b",
             "family_c", "random_solenoidal", "checkpoint")


class ConfigValidationError(ValueError):
    """All collected violations, one per line, with section.key locations."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("\n".join(violations))


@dataclass
class RunConfig:
    grid: BoxGrid
    gas: GasModel
    transport: TransportModel
    regularization: RegularizationParams
    boundary: BoundarySpec
    control: StepControl
    t_end: float
    max_steps: int
    sample_every: int
    seed: int
    workers: int
    out_dir: Path
    checkpoint_every: int
    profile: str
    amplitude: float
    mode: int
    rho0: float
    theta0: float
    b0: float
    checkpoint_path: str
    theta_b_spec: str
    warnings: list[str] = dc_field(default_factory=list)
    raw: dict = dc_field(default_factory=dict)


def _load_sections(path: Optional[str]) -> dict:
    cp = configparser.ConfigParser()
    cp.read_dict(_DEFAULTS)
    if path is not None:
        read = cp.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
    # environment overrides: MHDBOX_<SECTION>_<KEY>
    for key, val in os.environ.items():
        if not key.startswith(ENV_PREFIX + "_"):
            continue
        rest = key[len(ENV_PREFIX) + 1:]
        for section in _DEFAULTS:
            prefix = section.upper() + "_"
            if rest.startswith(prefix):
                opt = rest[len(prefix):].lower()
                if not cp.has_section(section):
                    cp.add_section(section)
                cp.set(section, opt, val)
    return {s: dict(cp.items(s)) for s in cp.sections()}


def _theta_b_from_spec(spec: str, lx: float):
    """Constant or 'gradient_x:<lo>,<hi>' boundary temperature."""
    spec = spec.strip()
    if spec.startswith("gradient_x:"):
        lo, hi = (float(v) for v in spec.split(":", 1)[1].split(","))

        def theta_b(t, X, Y, Z):
            frac = np.clip(X / lx, 0.0, 1.0)
            return lo + (hi - lo) * frac + 0.0 * (Y + Z)

        return theta_b, (lo, hi), False
    val = float(spec)
    return val, (val, val), True


def parse_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Parse and validate a run configuration.

    ``overrides`` maps "section.key" to string values (applied last, used by
    the CLI flags).  Raises ConfigValidationError carrying every violation.
    """
    sections = _load_sections(path)
    for sk, val in (overrides or {}).items():
        sec, key = sk.split(".", 1)
        sections.setdefault(sec, {})[key] = str(val)

    bad: list[str] = []
    warnings: list[str] = []

    def fval(sec, key, cast=float):
        try:
            return cast(sections[sec][key])
        except (KeyError, ValueError):
            bad.append(f"{sec}.{key}: not a valid {cast.__name__}")
            return None

    nx, ny, nz = (fval("grid", k, int) for k in ("nx", "ny", "nz"))
    lx, ly, lz = (fval("grid", k) for k in ("lx", "ly", "lz"))
    periodic_names = [s.strip() for s in sections["grid"]["periodic"].split(",") if s.strip()]
    periodic = tuple(ax in periodic_names for ax in ("x", "y", "z"))
    for name in periodic_names:
        if name not in ("x", "y", "z"):
            bad.append(f"grid.periodic: unknown axis '{name}'")

    grid = None
    if None not in (nx, ny, nz, lx, ly, lz):
        try:
            grid = BoxGrid(extents=(lx, ly, lz), n_cells=(nx, ny, nz), periodic=periodic)
        except ValueError as exc:
            bad.append(f"grid: {exc}")

    gas = None
    vals = {k: fval("gas", k) for k in ("c1", "p_inf", "a", "s0")}
    if None not in vals.values():
        try:
            gas = GasModel(**vals)
        except ValueError as exc:
            bad.append(f"gas: {exc}")

    tr = None
    tv = {k: fval("transport", k)
          for k in ("mu0", "eta0", "kappa0", "zeta0", "alpha", "beta")}
    if None not in tv.values():
        try:
            tr = TransportModel(**tv)
        except ValueError as exc:
            bad.append(f"transport: {exc}")
        if tr is not None and 3.0 <= tv["beta"] <= 6.0:
            warnings.append(
                f"transport.beta = {tv['beta']:g}: outside the global-solvability "
                "regime (requires beta > 6); the solver itself remains valid")

    params = None
    rv = {k: fval("regularization", k) for k in ("eps", "delta", "gamma")}
    variant = sections["regularization"]["grad_rho_variant"]
    if None not in rv.values():
        try:
            params = RegularizationParams(eps=rv["eps"], delta=rv["delta"],
                                          Gamma=rv["gamma"], grad_rho_variant=variant)
        except ValueError as exc:
            bad.append(f"regularization: {exc}")

    # boundary data
    theta_b = 1.0
    theta_b_spec = sections["boundary"]["theta_b"]
    theta_constant = True
    try:
        theta_b, (tb_lo, tb_hi), theta_constant = _theta_b_from_spec(
            theta_b_spec, lx if lx else 1.0)
        if tb_lo <= 0.0 or tb_hi <= 0.0:
            bad.append("boundary.theta_b: must be positive")
    except (ValueError, IndexError):
        bad.append("boundary.theta_b: must be a positive number or gradient_x:<lo>,<hi>")

    bb = tuple(fval("boundary", k) for k in ("bb_x", "bb_y", "bb_z"))
    gvec = tuple(fval("boundary", k) for k in ("g_x", "g_y", "g_z"))
    mbc_name = sections["boundary"]["magnetic_bc"]
    try:
        mbc = MagneticBC(mbc_name)
    except ValueError:
        bad.append(f"boundary.magnetic_bc: unknown variant '{mbc_name}'")
        mbc = MagneticBC.TANGENTIAL_DIRICHLET

    bc = None
    if None not in bb and None not in gvec:
        bc = BoundarySpec(theta_b=theta_b, B_B=bb, g=gvec, magnetic_bc=mbc)
        # a constant background field is divergence-free; verify discretely
        if grid is not None:
            bfaces = bc.bb_on_faces(grid, 0.0)
            div = grid.ops().divergence(*bfaces)
            scale = max(max(abs(v) for v in bb), 1e-30)
            if float(np.max(np.abs(div))) * min(grid.h) > 1e-12 * scale:
                bad.append("boundary.bb: background field is not solenoidal")

    if gas is not None and not theta_constant:
        # the default entropy family violates the vanishing-entropy limit at
        # high compression, which is only admissible for constant boundary
        # temperatures
        warnings.append(
            "boundary.theta_b: non-constant boundary temperature combined with the "
            "default entropy family (S(Z) does not vanish as Z grows); global "
            "solvability is not covered in this regime")

    control = None
    cv = {"cfl": fval("control", "cfl"), "dt_max": fval("control", "dt_max"),
          "max_halvings": fval("control", "max_halvings", int)}
    diffusion = {"explicit": "explicit", "lagged_implicit": "lagged_implicit"}.get(
        sections["control"]["diffusion"])
    if diffusion is None:
        bad.append(f"control.diffusion: unknown treatment "
                   f"'{sections['control']['diffusion']}'")
    if None not in cv.values() and diffusion is not None:
        try:
            control = StepControl(cfl=cv["cfl"], dt_max=cv["dt_max"],
                                  max_halvings=cv["max_halvings"],
                                  diffusion_treatment=diffusion,
                                  time_scheme=sections["control"]["time_scheme"],
                                  advection=sections["control"]["advection"])
        except ValueError as exc:
            bad.append(f"control: {exc}")

    profile = sections["initial"]["profile"]
    if profile not in _PROFILES:
        bad.append(f"initial.profile: unknown profile '{profile}'")
    amplitude = fval("initial", "amplitude")
    mode = fval("initial", "mode", int)
    rho0 = fval("initial", "rho0")
    theta0 = fval("initial", "theta0")
    b0 = fval("initial", "b0")
    if rho0 is not None and rho0 <= 0.0:
        bad.append("initial.rho0: must be positive")
    if theta0 is not None and theta0 <= 0.0:
        bad.append("initial.theta0: must be positive")

    t_end = fval("control", "t_end")
    max_steps = fval("control", "max_steps", int)
    sample_every = fval("control", "sample_every", int)
    seed = fval("control", "seed", int)
    workers = fval("control", "workers", int)
    if workers is not None and workers < 1:
        bad.append("control.workers: must be >= 1")
    checkpoint_every = fval("output", "checkpoint_every", int)

    if bad:
        raise ConfigValidationError(bad)

    return RunConfig(
        grid=grid, gas=gas, transport=tr, regularization=params, boundary=bc,
        control=control, t_end=t_end, max_steps=max_steps,
        sample_every=max(sample_every, 1), seed=seed, workers=workers,
        out_dir=Path(sections["output"]["dir"]), checkpoint_every=checkpoint_every,
        profile=profile, amplitude=amplitude, mode=mode, rho0=rho0, theta0=theta0,
        b0=b0, checkpoint_path=sections["initial"]["checkpoint_path"],
        theta_b_spec=theta_b_spec, warnings=warnings, raw=sections,
    )
