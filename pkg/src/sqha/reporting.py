"""Deterministic JSON and CSV writers for run artifacts."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

RUN_SCHEMA = "sqha.run_report.v1"


def jsonable(obj):
    """Plain JSON types; infinities become "infinite"/"-infinite", NaN becomes null."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "infinite" if v > 0 else "-infinite"
        return v
    return obj


def write_json(path, doc) -> Path:
    path = Path(path)
    path.write_text(json.dumps(jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return path


def write_ensemble_csv(path, n, n0, grid) -> Path:
    """Final stochastic densities: rows (realization, cell_index, q, n, n0)."""
    path = Path(path)
    n = np.atleast_2d(n)
    n0 = np.broadcast_to(n0, n.shape)
    q = grid.centers
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write("# schema: sqha.ensemble.v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["realization", "cell_index", "q", "n", "n0"])
        for r in range(n.shape[0]):
            for i in range(grid.n_cells):
                w.writerow([r, i, repr(float(q[i])), repr(float(n[r, i])), repr(float(n0[r, i]))])
    return path


def write_noise_csv(path, samples, grid) -> Path:
    """Sampled increments: rows (sample, cell_index, q, value)."""
    path = Path(path)
    q = grid.centers
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write("# schema: sqha.noise.v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "cell_index", "q", "value"])
        for s in range(samples.shape[0]):
            for i in range(grid.n_cells):
                w.writerow([s, i, repr(float(q[i])), repr(float(samples[s, i]))])
    return path


def read_csv_rows(path) -> list:
    """Rows as dicts, skipping the schema comment line."""
    with Path(path).open(encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
