"""Deterministic output files: CSV time series, legacy VTK snapshots, JSON reports, manifests.

Floats are written with 17 significant digits so values round-trip exactly.
Nothing time- or host-dependent is written, so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .analysis import dissipation_terms
from .solver import SimConfig, SimState, cell_yield_stress

TIMESERIES_COLUMNS = [
    "step", "t", "kinetic_energy", "kinetic_rate", "newtonian_dissipation", "plastic_dissipation",
    "viscous_dissipation", "slip_dissipation", "forcing_work", "allowance", "slack", "margin",
    "div_max", "boundary_normal_max", "v_max", "pf_l2", "pf_rate", "pf_dissipation", "pf_forcing",
    "pf_balance", "gronwall_lhs", "gronwall_bound", "picard_iterations", "cfl",
]


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_timeseries_csv(path, rows, columns=TIMESERIES_COLUMNS):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for k, row in enumerate(rows):
            record = {"step": k + 1, **row}
            writer.writerow([fmt(record[c]) for c in columns])


def read_timeseries_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [{k: float(v) for k, v in r.items()} for r in reader]


def _vtk_values(arr, per_line=6):
    """Cell values in x-fastest order, several per line."""
    flat = np.asarray(arr, dtype=float).ravel(order="F")
    lines = []
    for i in range(0, flat.size, per_line):
        lines.append(" ".join(fmt(v) for v in flat[i:i + per_line]))
    return "\n".join(lines)


def snapshot_fields(state: SimState, cfg: SimConfig):
    """Cell fields written to snapshots: ``p``, ``p_f``, ``|Dv|``, ``|S|`` and cell velocity."""
    grid = cfg.grid
    tau = cell_yield_stress(state.p_f, cfg, state.t)
    _, _, _, _, ss = dissipation_terms(state, cfg, tau)
    dnorm = ss.cell_norm
    snorm = (ss.mu_cell[0] + ss.mu_cell[1]) * dnorm
    return {
        "p": state.p.values,
        "p_f": state.p_f.values,
        "strain_rate_norm": dnorm.reshape(grid.shape),
        "stress_norm": snorm.reshape(grid.shape),
    }, state.v.cell_average()


def write_vtk(path, state: SimState, cfg: SimConfig, title=None):
    grid = cfg.grid
    shape = list(grid.shape) + [1] * (3 - grid.dim)
    spacing = list(grid.spacing) + [min(grid.spacing)] * (3 - grid.dim)
    scalars, vel = snapshot_fields(state, cfg)
    out = [
        "# vtk DataFile Version 3.0",
        title or f"granflow t={fmt(state.t)}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(n + 1) for n in shape),
        "ORIGIN 0 0 0",
        "SPACING " + " ".join(fmt(h) for h in spacing),
        f"CELL_DATA {grid.n_cells}",
    ]
    for name, arr in scalars.items():
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _vtk_values(arr)]
    comps = [vel[a].ravel(order="F") for a in range(grid.dim)]
    comps += [np.zeros(grid.n_cells)] * (3 - grid.dim)
    out.append("VECTORS velocity double")
    out += [" ".join(fmt(c[i]) for c in comps) for i in range(grid.n_cells)]
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


@dataclass
class OutputManifest:
    run_id: str
    config_hash: str
    files: list = field(default_factory=list)

    def add(self, path, kind):
        if kind not in ("timeseries_csv", "field_vtk", "report_json"):
            raise ValueError(f"unknown output kind {kind!r}")
        self.files.append((str(path), kind))

    def validate(self):
        for path, _ in self.files:
            if not os.path.isfile(path) or os.path.getsize(path) == 0:
                raise FileNotFoundError(f"manifest entry missing or empty: {path}")

    def write(self, path):
        self.validate()
        base = os.path.dirname(os.path.abspath(path))
        write_json(path, {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "files": [{"path": os.path.relpath(os.path.abspath(p), base), "kind": k} for p, k in self.files],
        })
