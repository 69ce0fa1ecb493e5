"""Time-series and convergence figures from diagnostics.csv / report.json."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

SUPPORTED_SCHEMA = 1

# the documented diagnostics.csv column set, in file order
DIAGNOSTIC_COLUMNS = [
    "t",
    "total_energy",
    "ballistic_energy",
    "entropy_total",
    "entropy_production_integral",
    "ballistic_residual",
    "divB_max",
    "boundary_heat_flux",
    "boundary_poynting_flux",
]


class SchemaVersionError(ValueError):
    """Input files do not match the supported schema."""


@dataclass
class SeriesBundle:
    """Parsed diagnostics columns plus run metadata."""

    columns: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.columns["t"]


def load_series(csv_path, json_path) -> SeriesBundle:
    """Parse and validate the CSV/JSON pair."""
    csv_path = Path(csv_path)
    json_path = Path(json_path)
    meta = json.loads(json_path.read_text())
    version = meta.get("schema_version")
    if version != SUPPORTED_SCHEMA:
        raise SchemaVersionError(
            f"report schema version {version!r} not supported (expected {SUPPORTED_SCHEMA})")

    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [row for row in reader]
    if header != DIAGNOSTIC_COLUMNS:
        raise SchemaVersionError(
            f"diagnostics.csv columns {header} do not match the documented schema")
    data = np.array([[float(v) for v in row] for row in rows]) if rows else \
        np.zeros((0, len(header)))
    columns = {name: data[:, i].copy() for i, name in enumerate(header)}
    lengths = {name: len(col) for name, col in columns.items()}
    if len(set(lengths.values())) > 1:
        raise SchemaVersionError(f"ragged columns: {lengths}")
    t = columns["t"]
    if t.size >= 2 and not np.all(np.diff(t) > 0.0):
        raise SchemaVersionError("time column must be strictly increasing")
    return SeriesBundle(columns=columns, meta=meta)


def _new_axes(title, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _all_zero(arr) -> bool:
    return arr.size == 0 or not np.any(arr != 0.0)


def render(csv_path, json_path, out_dir) -> list[Path]:
    """Render the full figure set; returns the list of written paths.

    Figures whose optional columns are entirely empty (for example div B in a
    purely hydrodynamic run) are skipped and noted in the log.
    """
    bundle = load_series(csv_path, json_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = bundle.columns
    t = bundle.t
    written: list[Path] = []

    fig, ax = _new_axes("Energy", "t", "energy")
    ax.plot(t, cols["total_energy"], label="total")
    ax.plot(t, cols["ballistic_energy"], label="ballistic", linestyle="--")
    ax.legend()
    written.append(_save(fig, out_dir / "energy.png"))

    fig, ax = _new_axes("Entropy", "t", "entropy")
    ax.plot(t, cols["entropy_total"], label="total entropy")
    ax.plot(t, cols["entropy_production_integral"], label="production integral",
            linestyle="--")
    ax.legend()
    written.append(_save(fig, out_dir / "entropy.png"))

    fig, ax = _new_axes("Ballistic balance residual (per interval)", "t", "residual")
    ax.plot(t, cols["ballistic_residual"])
    written.append(_save(fig, out_dir / "ballistic_residual.png"))

    if _all_zero(cols["divB_max"]):
        logger.info("divB figure skipped: column is identically zero")
    else:
        fig, ax = _new_axes("Magnetic divergence", "t", "max |div B|")
        ax.semilogy(t, np.maximum(cols["divB_max"], 1e-300))
        written.append(_save(fig, out_dir / "divb.png"))

    if _all_zero(cols["boundary_heat_flux"]) and _all_zero(cols["boundary_poynting_flux"]):
        logger.info("boundary-flux figure skipped: columns are identically zero")
    else:
        fig, ax = _new_axes("Boundary fluxes", "t", "outward flux")
        ax.plot(t, cols["boundary_heat_flux"], label="heat")
        ax.plot(t, cols["boundary_poynting_flux"], label="magnetic", linestyle="--")
        ax.legend()
        written.append(_save(fig, out_dir / "boundary_flux.png"))

    written.extend(_render_ws(bundle, Path(csv_path).parent, out_dir))
    return written


def _render_ws(bundle: SeriesBundle, src_dir: Path, out_dir: Path) -> list[Path]:
    """Relative-energy and convergence figures for weak-strong reports."""
    meta = bundle.meta
    entries = meta.get("entries")
    if meta.get("command") != "ws-test" or not entries:
        return []
    written = []

    fig, ax = _new_axes("Relative energy vs reference", "t", "E_rel")
    plotted = False
    for entry in entries:
        n = entry["resolution"]
        path = src_dir / f"e_rel_{n}.csv"
        if not path.exists():
            logger.info("companion %s missing; skipping its trace", path.name)
            continue
        with open(path, newline="") as f:
            reader = csv.reader(f)
            next(reader)
            data = np.array([[float(a), float(b)] for a, b in reader])
        if data.size == 0:
            continue
        positive = np.maximum(data[:, 1], 1e-300)
        ax.semilogy(data[:, 0], positive, label=f"{n}^3")
        plotted = True
    if plotted:
        ax.legend()
        written.append(_save(fig, out_dir / "relative_energy.png"))
    else:
        plt.close(fig)

    res = [e["resolution"] for e in entries]
    emax = [e["e_rel_max"] for e in entries]
    if len(res) >= 2 and all(v > 0.0 for v in emax):
        fig, ax = _new_axes("Convergence of max relative energy", "cells per axis",
                            "max E_rel")
        ax.loglog(res, emax, marker="o")
        order = meta.get("fitted_order")
        if order is not None and np.isfinite(order):
            ax.annotate(f"fitted order {order:.2f}", xy=(res[-1], emax[-1]),
                        xytext=(0.55, 0.85), textcoords="axes fraction")
        written.append(_save(fig, out_dir / "convergence.png"))
    else:
        logger.info("convergence figure skipped: need >= 2 non-zero entries")
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mhdbox-plots",
        description="Render figures from a completed mhdbox output directory")
    parser.add_argument("csv", help="path to diagnostics.csv")
    parser.add_argument("json", help="path to report.json")
    parser.add_argument("out", help="output directory for figures")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        written = render(args.csv, args.json, args.out)
    except SchemaVersionError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
