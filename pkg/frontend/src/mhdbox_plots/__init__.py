"""Static figure rendering for mhdbox batch outputs.

Consumes exactly the simulator's external interfaces: the per-sample
``diagnostics.csv`` stream and the run ``report.json`` (plus the companion
``e_rel_<n>.csv`` files of weak-strong experiments).  Produces one figure per
diagnostic family as PNG files; rendering is read-only and deterministic.
"""

from mhdbox_plots.render import SeriesBundle, SchemaVersionError, load_series, render

__all__ = ["render", "load_series", "SeriesBundle", "SchemaVersionError"]

__version__ = "0.1.0"
