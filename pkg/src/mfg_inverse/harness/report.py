"""Report serialization and plot-data tables.

Reports are JSON with every array embedded as CSV text (``repr`` floats, so
values round-trip exactly). The only time-dependent entry is
``wall_clock_seconds``; ``content_hash`` covers everything else, so two
runs of the same config produce the same hash and, apart from that one
field, the same bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..grid import fields_to_csv
from ..probes import ReconstructionReport

WALL_CLOCK_KEY = "wall_clock_seconds"


def _plain(obj):
    """Convert numpy scalars/arrays inside diagnostics to JSON types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def report_to_dict(report: ReconstructionReport, extra: dict | None = None) -> dict:
    g = report.grid
    unknowns = {}
    for name, (truth, rec) in sorted(report.unknowns.items()):
        unknowns[name] = {"truth_csv": fields_to_csv(g.x, truth),
                          "recovered_csv": fields_to_csv(g.x, rec)}
    body = {
        "grid": {"n_x": g.n_x, "n_t": g.n_t, "T": g.T, "beta": g.beta},
        "unknowns": unknowns,
        "errors": _plain(report.errors),
        "diagnostics": _plain(report.diagnostics),
    }
    if extra:
        body.update(_plain(extra))
    body["content_hash"] = content_hash(body)
    body[WALL_CLOCK_KEY] = float(report.runtime_seconds)
    return body


def content_hash(doc: dict) -> str:
    clean = {k: v for k, v in doc.items() if k not in (WALL_CLOCK_KEY, "content_hash")}
    return hashlib.sha256(json.dumps(clean, sort_keys=True).encode()).hexdigest()


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def write_report(report: ReconstructionReport, out_dir: Path, extra: dict | None = None,
                 formats=("json", "csv")) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = report_to_dict(report, extra)
    if "json" in formats:
        (out_dir / "report.json").write_text(dumps(doc))
    if "csv" in formats:
        emit_plot_data(report, out_dir)
    return doc


def plot_tables(report: ReconstructionReport) -> dict[str, tuple[list[str], np.ndarray]]:
    """Per-unknown tables: ``(x, truth, recovered, abs_error)`` for fields,
    ``(x, y, truth, recovered)`` with ``n_x**2`` rows for kernels."""
    x = report.grid.x
    tables = {}
    for name, (truth, rec) in sorted(report.unknowns.items()):
        if truth.ndim == 2:
            xx, yy = np.meshgrid(x, x, indexing="ij")
            data = np.column_stack([xx.ravel(), yy.ravel(), truth.ravel(), rec.ravel()])
            tables[name] = (["x", "y", "truth", "recovered"], data)
        else:
            data = np.column_stack([x, truth, rec, np.abs(rec - truth)])
            tables[name] = (["x", "truth", "recovered", "abs_error"], data)
    return tables


def emit_plot_data(report: ReconstructionReport, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (header, data) in plot_tables(report).items():
        path = out_dir / f"plot_{name}.csv"
        lines = [",".join(header)]
        lines += [",".join(repr(float(v)) for v in row) for row in data]
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths
