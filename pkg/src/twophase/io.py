"""Result files: legacy VTK cell data, CSV tables and a run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .analysis import ERROR_KEYS, ConvergenceRow, ConvergenceTable, ErrorReport
from .errors import IoFailure
from .grid import StructuredGrid
from .stepper import IterationHistory

CONVERGENCE_COLUMNS = (
    "h", "tau",
    "E_p", "rate_p",
    "E_stheta", "rate_stheta",
    "E_theta", "rate_theta",
    "E_s", "rate_s",
)
HISTORY_COLUMNS = ("step", "iter", "inc_theta", "inc_q", "ratio")

_RATE_OF = {"E_p": "rate_p", "E_stheta": "rate_stheta", "E_theta": "rate_theta", "E_s": "rate_s"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    return format(value, ".17g")


def _write_text(path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


# -- VTK ------------------------------------------------------------------


def write_vtk(grid: StructuredGrid, fields: Mapping[str, np.ndarray] | Sequence[tuple[str, np.ndarray]],
              path, title: str = "twophase cell data") -> Path:
    """Legacy ASCII VTK file on STRUCTURED_POINTS with one SCALARS block per cell field.

    Cells are written in the grid's own order (x fastest), which is also the
    VTK order for structured points. 2D grids are written as one layer of cells.
    """
    items = list(fields.items()) if isinstance(fields, Mapping) else list(fields)
    for name, values in items:
        if np.shape(values) != (grid.n_cells,):
            raise IoFailure(f"field {name!r} has shape {np.shape(values)}, expected ({grid.n_cells},)")
        if not name or any(ch.isspace() for ch in name):
            raise IoFailure(f"invalid VTK field name {name!r}")
    counts = list(grid.counts) + [1] * (3 - grid.dim)
    spacing = list(grid.h) + [1.0] * (3 - grid.dim)
    origin = list(grid.lo) + [0.0] * (3 - grid.dim)
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(c + 1) for c in counts),
        "ORIGIN " + " ".join(_fmt(v) for v in origin),
        "SPACING " + " ".join(_fmt(v) for v in spacing),
    ]
    if items:
        lines.append(f"CELL_DATA {grid.n_cells}")
    for name, values in items:
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        vals = np.asarray(values, dtype=float)
        lines.extend(_fmt(v) for v in vals)
    return _write_text(path, "\n".join(lines) + "\n")


def read_vtk_cell_data(path) -> tuple[tuple[int, ...], dict[str, np.ndarray]]:
    """Point dimensions and cell fields of a file written by :func:`write_vtk`."""
    try:
        tokens = Path(path).read_text().split("\n")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not tokens[0].startswith("# vtk DataFile"):
        raise IoFailure("missing VTK magic line")
    if tokens[3].strip() != "DATASET STRUCTURED_POINTS":
        raise IoFailure("not a STRUCTURED_POINTS dataset")
    dims = tuple(int(v) for v in tokens[4].split()[1:])
    fields: dict[str, np.ndarray] = {}
    i = 7
    n = 0
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("CELL_DATA"):
            n = int(line.split()[1])
            i += 1
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            fields[name] = np.array([float(v) for v in tokens[i + 2: i + 2 + n]])
            i += 2 + n
        else:
            i += 1
    return dims, fields


# -- CSV ------------------------------------------------------------------


def _write_csv(path, columns, rows, comment: str) -> Path:
    lines = [f"# {comment}", "# columns: " + ", ".join(columns), ",".join(columns)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return _write_text(path, "\n".join(lines) + "\n")


def convergence_rows(table: ConvergenceTable) -> list[list]:
    out = []
    for row in table.rows:
        vals = [row.h, row.tau]
        for key in ERROR_KEYS:
            vals.append(getattr(row.report, key))
            vals.append(row.rates.get(key))
        out.append(vals)
    return out


def history_rows(histories: IterationHistory | Iterable[IterationHistory]) -> list[list]:
    if isinstance(histories, IterationHistory):
        histories = [histories]
    return [
        [h.step, r.iteration, r.inc_theta, r.inc_q, r.ratio]
        for h in histories
        for r in h.records
    ]


def write_csv(table: Union[ConvergenceTable, IterationHistory, Sequence[IterationHistory]], path) -> Path:
    """Write a convergence table or iteration histories with 17 significant digits.

    Missing values (rates of the first row, the ratio of the first iteration)
    are left empty.
    """
    if isinstance(table, ConvergenceTable):
        if not table.rows:
            raise IoFailure("empty convergence table")
        return _write_csv(path, CONVERGENCE_COLUMNS, convergence_rows(table),
                          "convergence table, one row per refinement level")
    rows = history_rows(table)
    if not rows:
        raise IoFailure("empty iteration history")
    return _write_csv(path, HISTORY_COLUMNS, rows, "L-scheme increments, one row per iteration")


def read_csv(path) -> tuple[list[str], list[dict[str, Optional[float]]]]:
    """Column names and rows of a CSV written by :func:`write_csv`; empty cells become None."""
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(lines)
    header = next(reader)
    rows = [{k: (float(v) if v != "" else None) for k, v in zip(header, rec)} for rec in reader]
    return header, rows


def read_convergence_csv(path) -> ConvergenceTable:
    header, rows = read_csv(path)
    if tuple(header) != CONVERGENCE_COLUMNS:
        raise IoFailure(f"{path} is not a convergence table")
    table = ConvergenceTable()
    for rec in rows:
        report = ErrorReport(h=rec["h"], tau=rec["tau"], **{k: rec[k] for k in ERROR_KEYS})
        rates = {k: rec[_RATE_OF[k]] for k in ERROR_KEYS if rec[_RATE_OF[k]] is not None}
        table.rows.append(ConvergenceRow(rec["h"], rec["tau"], report, rates))
    return table


# -- manifest -------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """What a run was asked to do, how long it took and which files it wrote."""

    config: dict
    grid: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    version: str = ""
    artifacts: list = field(default_factory=list)

    def add_artifact(self, path, root) -> None:
        path = Path(path)
        rel = os.path.relpath(path, root)
        self.artifacts.append({"path": rel, "sha256": sha256_file(path)})

    def as_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "grid": self.grid,
            "tolerances": self.tolerances,
            "timings": self.timings,
            "artifacts": self.artifacts,
        }

    def write(self, path) -> Path:
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True, default=_json_default)
        return _write_text(path, text + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def grid_summary(grid: StructuredGrid) -> dict:
    return {
        "dim": grid.dim,
        "counts": list(grid.counts),
        "extents": [list(e) for e in grid.extents],
        "n_cells": grid.n_cells,
        "n_faces": grid.n_faces,
    }
