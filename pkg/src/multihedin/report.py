"""Serialization of run reports.

``report.json`` holds everything that is a function of the configuration only,
so two runs of the same configuration write byte-identical files.  Wall-clock
timings go to a separate ``timing.json``.  CSV matrices use ``%.17g``.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

FLOAT_FORMAT = "{:.17g}"


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays to plain Python; complex becomes ``[re, im]``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def dumps_report(report: dict) -> str:
    """Canonical JSON text; non-finite numbers are rejected."""
    return json.dumps(to_jsonable(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def format_float(x) -> str:
    return FLOAT_FORMAT.format(float(x))


def matrix_csv(matrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in np.atleast_2d(np.asarray(matrix, dtype=float)):
        writer.writerow([format_float(x) for x in row])
    return buf.getvalue()


def table_csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else format_float(v) if isinstance(v, (float, np.floating)) else v
                         for v in row])
    return buf.getvalue()


def write_report(directory, report: dict, formats=("json", "csv"), timing: dict | None = None) -> list:
    """Write ``report.json``, per-matrix CSVs and ``timing.json``; returns written paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        path = out / name
        path.write_text(text)
        written.append(path)

    if "json" in formats:
        put("report.json", dumps_report(report))
    if "csv" in formats:
        for block in ("solver", "oracle"):
            for sp in report.get(block, {}).get("species", []):
                put(f"{block}_density_{sp['name']}.csv", matrix_csv(sp["density_matrix"]))
        w = report.get("solver", {}).get("screened_interaction_nu0")
        if w is not None:
            put("screened_interaction_nu0.csv", matrix_csv(w))
        dev = report.get("deviations")
        if dev is not None:
            rows = [[d["species"], d["density"], d["site_density"], d["green"]] for d in dev["species"]]
            put("deviations.csv", table_csv(["species", "density", "site_density", "green"], rows))
    if timing is not None:
        put("timing.json", json.dumps(to_jsonable(timing), indent=2, sort_keys=True) + "\n")
    return written
