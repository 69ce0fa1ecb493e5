"""Batch front door: configure, run, and report.

Subcommands:

  simulate     time-integrate the configured initial data, streaming
               diagnostics.csv / steps.csv, report.json and checkpoints
  ws-test      weak-strong relative-energy experiment over a resolution list
  limit-study  (eps, delta) -> 0 sweep with inequality-defect tracking
  check-thermo structural hypotheses of the equation of state
  check-ops    discrete operator identities (integration by parts, curls)

Common flags: --config <path> --out <dir> [--seed N] [--steps N]
[--workers N]; ws-test adds --resolutions, limit-study adds --schedule.
Exit status 0 means every enabled invariant gate passed; failures leave a
machine-readable record in report.json.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from mhdbox import diagnostics as dg
from mhdbox import solver as sv
from mhdbox.config import ConfigValidationError, RunConfig, parse_config
from mhdbox.discrete_ops import sbp_report
from mhdbox.grid import (
    BoxGrid,
    FieldState,
    apply_boundaries,
    initial_divergence_cleaning,
    load_checkpoint,
    save_checkpoint,
)
from mhdbox.thermo import hypothesis_report
from mhdbox.verification import (
    make_reference,
    regularization_limit_study,
    weak_strong_experiment,
)

STEP_COLUMNS = ["t", "dt", "min_rho", "min_theta", "max_u", "max_b",
                "divb_max", "sigma_min"]

REPORT_SCHEMA_VERSION = 1


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o)}")


def _write_report(out_dir: Path, payload: dict) -> None:
    payload = {"schema_version": REPORT_SCHEMA_VERSION, **payload}
    with open(out_dir / "report.json", "w") as f:
        json.dump(payload, f, indent=2, default=_json_default)
        f.write("\n")


def build_initial_state(cfg: RunConfig, rng: np.random.Generator):
    """Initial FieldState (plus per-profile grid/BC adjustments)."""
    grid, bc = cfg.grid, cfg.boundary
    profile = cfg.profile

    if profile.startswith("family_"):
        fam = profile.split("_", 1)[1].upper()
        ref, _ = make_reference(fam, cfg.gas, cfg.transport, extents=grid.extents,
                                amplitude=cfg.amplitude, rho0=cfg.rho0,
                                theta0=cfg.theta0, b0=cfg.b0,
                                magnetic_bc=bc.magnetic_bc)
        grid = BoxGrid(extents=grid.extents, n_cells=grid.n_cells, periodic=ref.periodic)
        return ref.state(grid, 0.0), grid, ref.bc

    cshape = grid.cell_shape()
    rho = np.full(cshape, cfg.rho0)
    theta = np.full(cshape, cfg.theta0)
    u = [np.zeros(grid.face_shape(c)) for c in range(3)]
    b = list(bc.bb_on_faces(grid, 0.0))

    if profile == "acoustic":
        k = cfg.mode * np.pi / grid.extents[0]
        xf = grid.face_coords(0)
        u[0] = np.broadcast_to((cfg.amplitude * np.sin(k * xf))[:, None, None],
                               grid.face_shape(0)).copy()
    elif profile == "alfven":
        if not (grid.periodic[1] and grid.periodic[2]):
            grid = BoxGrid(extents=grid.extents, n_cells=grid.n_cells,
                           periodic=(grid.periodic[0], True, True))
            u = [np.zeros(grid.face_shape(c)) for c in range(3)]
            b = list(bc.bb_on_faces(grid, 0.0))
            rho = np.full(grid.cell_shape(), cfg.rho0)
            theta = np.full(grid.cell_shape(), cfg.theta0)
        k = cfg.mode * np.pi / grid.extents[0]
        xc = grid.cell_coords(0)
        u[1] = np.broadcast_to((cfg.amplitude * np.cos(k * xc))[:, None, None],
                               grid.face_shape(1)).copy()
    elif profile == "random_solenoidal":
        pot = tuple(rng.standard_normal(grid.edge_shape(c)) for c in range(3))
        raw = grid.ops().curl_edge_to_face(*pot)
        scale = cfg.amplitude / max(np.max(np.abs(c)) for c in raw)
        b = [bb + scale * c for bb, c in zip(b, raw)]
    elif profile == "checkpoint":
        st = load_checkpoint(cfg.checkpoint_path, periodic=grid.periodic)
        return st, st.grid, bc
    elif profile != "equilibrium":
        raise ValueError(f"unhandled profile {profile}")

    b = list(initial_divergence_cleaning(grid, tuple(b)))
    st = FieldState(grid=grid, rho=rho, theta=theta,
                    ux=u[0], uy=u[1], uz=u[2], bx=b[0], by=b[1], bz=b[2])
    return st, grid, bc


def _run_and_stream(cfg: RunConfig, state, grid, bc, out: Path, forcing=None,
                    t_end=None, max_steps=None) -> dict:
    """Advance the state, streaming diagnostics.csv / steps.csv / checkpoints.

    Returns a summary dict with the invariant-gate violations collected
    during the run.
    """
    gas, tr, params, control = cfg.gas, cfg.transport, cfg.regularization, cfg.control
    t_end = cfg.t_end if t_end is None else t_end
    max_steps = cfg.max_steps if max_steps is None else max_steps

    state = apply_boundaries(state, bc, state.t)
    theta_tilde = dg.harmonic_extension(grid, bc, state.t)
    mass0 = float(np.sum(state.rho) * grid.cell_volume)

    violations: list[str] = []
    prod_integral = 0.0
    prev_sigma_int = float(np.sum(dg.entropy_production_cells(state, tr)) * grid.cell_volume)
    last_sample = state
    max_mass_step = 0.0
    prev_mass = mass0

    steps_rows = []
    diag_rows = [dg.energy_report_row(state, gas, tr, bc, theta_tilde, 0.0, 0.0)]

    n_steps = 0
    while True:
        if t_end > 0.0 and state.t >= t_end - 1e-12:
            break
        if t_end <= 0.0 and n_steps >= max_steps:
            break
        try:
            state, dt, rep = sv.step(state, bc, params, control, gas, tr,
                                     forcing=forcing)
        except (sv.PositivityFailure, sv.SolverDivergence, sv.CFLCollapse) as exc:
            violations.append(f"{type(exc).__name__}: {exc}")
            break
        n_steps += 1
        mass = float(np.sum(state.rho) * grid.cell_volume)
        max_mass_step = max(max_mass_step, abs(mass - prev_mass))
        prev_mass = mass

        sig_int = float(np.sum(dg.entropy_production_cells(state, tr)) * grid.cell_volume)
        prod_integral += 0.5 * (prev_sigma_int + sig_int) * dt
        prev_sigma_int = sig_int

        steps_rows.append([rep[k] for k in ["t", "dt", "min_rho", "min_theta",
                                            "max_u", "max_b", "divb_max", "sigma_min"]])
        if rep["sigma_min"] < 0.0:
            violations.append(f"entropy production negative at t={rep['t']:.6g}")
        if rep["divb_defect"] > 1e-12:
            violations.append(f"div B defect {rep['divb_defect']:.3e} at t={rep['t']:.6g}")

        if n_steps % cfg.sample_every == 0:
            bal = dg.ballistic_balance_residual([last_sample, state], gas, tr, bc,
                                                theta_tilde=theta_tilde)
            diag_rows.append(dg.energy_report_row(state, gas, tr, bc, theta_tilde,
                                                  prod_integral, bal["residual"]))
            last_sample = state
        if cfg.checkpoint_every > 0 and n_steps % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_{n_steps:06d}.mhdb", state)

    # forcing work is an external energy source not covered by the mass gate
    if max_mass_step > 1e-12 * mass0:
        violations.append(f"mass drift per step {max_mass_step / mass0:.3e} exceeds 1e-12")

    with open(out / "diagnostics.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(dg.ENERGY_REPORT_COLUMNS)
        for row in diag_rows:
            w.writerow([_fmt(getattr(row, k)) for k in dg.ENERGY_REPORT_COLUMNS])
    with open(out / "steps.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(STEP_COLUMNS)
        for row in steps_rows:
            w.writerow([_fmt(v) for v in row])
    save_checkpoint(out / "final.mhdb", state)

    return {
        "violations": violations,
        "steps": n_steps,
        "t_final": state.t,
        "mass_initial": mass0,
        "max_mass_step_drift": max_mass_step,
        "rows": len(diag_rows),
    }


def cmd_simulate(cfg: RunConfig) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    state, grid, bc = build_initial_state(cfg, rng)
    summary = _run_and_stream(cfg, state, grid, bc, out)
    status = "pass" if not summary["violations"] else "fail"
    _write_report(out, {
        "command": "simulate",
        "status": status,
        "warnings": cfg.warnings,
        "profile": cfg.profile,
        "seed": cfg.seed,
        "workers": cfg.workers,
        **summary,
    })
    return 0 if status == "pass" else 1


def cmd_ws_test(cfg: RunConfig, resolutions) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    fam = cfg.profile.split("_", 1)[1].upper() if cfg.profile.startswith("family_") else "B"
    t_end = cfg.t_end if cfg.t_end > 0.0 else 0.25
    report = weak_strong_experiment(fam, cfg.gas, cfg.transport, resolutions,
                                    t_end=t_end, amplitude=cfg.amplitude,
                                    magnetic_bc=cfg.boundary.magnetic_bc,
                                    control=cfg.control, params=cfg.regularization)
    for entry in report["entries"]:
        with open(out / f"e_rel_{entry['resolution']}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "e_rel"])
            for t, e in zip(entry["times"], entry["e_rel"]):
                w.writerow([_fmt(t), _fmt(e)])
        entry.pop("times")
        entry.pop("e_rel")

    # stream the diagnostics of the finest-resolution forced run so the
    # output directory carries the full CSV/JSON interface
    n_fine = max(resolutions)
    ref, forcing = make_reference(fam, cfg.gas, cfg.transport,
                                  amplitude=cfg.amplitude, rho0=cfg.rho0,
                                  theta0=cfg.theta0, b0=cfg.b0,
                                  magnetic_bc=cfg.boundary.magnetic_bc)
    grid = BoxGrid(extents=(1.0, 1.0, 1.0), n_cells=(n_fine,) * 3,
                   periodic=ref.periodic)
    stream = _run_and_stream(cfg, ref.state(grid, 0.0), grid, ref.bc, out,
                             forcing=forcing.solver_forcing(grid), t_end=t_end)

    ok = report["pass"] and not stream["violations"]
    _write_report(out, {"command": "ws-test", "warnings": cfg.warnings, **report,
                        "stream": stream, "status": "pass" if ok else "fail"})
    return 0 if ok else 1


def cmd_limit_study(cfg: RunConfig, schedule) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    fam = cfg.profile.split("_", 1)[1].upper() if cfg.profile.startswith("family_") else "B"
    t_end = cfg.t_end if cfg.t_end > 0.0 else 0.25
    report = regularization_limit_study(
        cfg.gas, cfg.transport, schedule, family=fam,
        resolution=cfg.grid.n_cells[0], t_end=t_end, amplitude=cfg.amplitude,
        Gamma=cfg.regularization.Gamma, rho0=cfg.rho0, theta0=cfg.theta0,
        control=cfg.control)
    _write_report(out, {"command": "limit-study", "warnings": cfg.warnings, **report,
                        "status": "pass" if report["pass"] else "fail"})
    return 0 if report["pass"] else 1


def cmd_check_thermo(cfg: RunConfig) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    z_grid = np.geomspace(1e-4, 1e4, 65)
    report = hypothesis_report(cfg.gas, z_grid)
    ok = report["all_structural_ok"]
    _write_report(out, {"command": "check-thermo", "warnings": cfg.warnings,
                        "status": "pass" if ok else "fail", **report})
    return 0 if ok else 1


def cmd_check_ops(cfg: RunConfig) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    report = sbp_report(cfg.grid.ops(), trials=5, seed=cfg.seed)
    ok = report["max_residual"] <= 1e-12
    _write_report(out, {"command": "check-ops", "warnings": cfg.warnings,
                        "status": "pass" if ok else "fail", **report})
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mhdbox", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "ws-test", "limit-study", "check-thermo", "check-ops"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="path to run configuration")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None, help="max steps override")
        p.add_argument("--workers", type=int, default=None)
        if name == "ws-test":
            p.add_argument("--resolutions", default="16,32",
                           help="comma-separated cell counts")
        if name == "limit-study":
            p.add_argument("--schedule", default="1e-2,1e-3,1e-4",
                           help="comma-separated eps=delta values")

    args = parser.parse_args(argv)
    overrides = {}
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.seed is not None:
        overrides["control.seed"] = args.seed
    if args.steps is not None:
        overrides["control.max_steps"] = args.steps
    if args.workers is not None:
        overrides["control.workers"] = args.workers

    try:
        cfg = parse_config(args.config, overrides)
    except ConfigValidationError as exc:
        print("configuration rejected:", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 2

    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)

    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "ws-test":
        resolutions = [int(s) for s in args.resolutions.split(",") if s]
        return cmd_ws_test(cfg, resolutions)
    if args.command == "limit-study":
        vals = [float(s) for s in args.schedule.split(",") if s]
        return cmd_limit_study(cfg, [(v, v) for v in vals])
    if args.command == "check-thermo":
        return cmd_check_thermo(cfg)
    if args.command == "check-ops":
        return cmd_check_ops(cfg)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
