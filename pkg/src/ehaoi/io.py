"""Deterministic CSV / JSON artifacts.

Every CSV starts with one ``#`` comment line carrying the tool version and the
resolved configuration; every JSON document carries them as fields.  Floats
are written with ``repr`` so identical runs give byte-identical files.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import __version__


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def header_line(config: dict) -> str:
    return f"# ehaoi {__version__} config={json.dumps(_plain(config), sort_keys=True, separators=(',', ':'))}"


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_csv(path, columns, rows, config: dict) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(header_line(config) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(x) for x in row])
    return path


def read_csv(path):
    """Rows of an artifact CSV as dicts of strings (header comment skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_json(path, payload: dict, config: dict) -> Path:
    path = Path(path)
    doc = {"tool": "ehaoi", "version": __version__, "config": _plain(config)}
    doc.update(_plain(payload))
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def policy_rows(table: np.ndarray):
    """``(row, col, r, delta, action)`` for every belief-state, in index order."""
    R, C, _, D = table.shape
    for row in range(R):
        for col in range(C):
            for r in (0, 1):
                for d in range(D):
                    yield row, col, r, d + 1, int(table[row, col, r, d])


def value_rows(h: np.ndarray, shape):
    H = np.asarray(h).reshape(shape)
    R, C, _, D = shape
    for row in range(R):
        for col in range(C):
            for r in (0, 1):
                for d in range(D):
                    yield row, col, r, d + 1, float(H[row, col, r, d])


def policy_grid(table: np.ndarray):
    """Grid view: one line per ``(r, delta)``, one column per belief ``row:col``."""
    R, C, _, D = table.shape
    columns = ["r", "delta"] + [f"{row}:{col}" for row in range(R) for col in range(C)]
    rows = []
    for r in (0, 1):
        for d in range(D):
            rows.append([r, d + 1] + [int(table[row, col, r, d]) for row in range(R) for col in range(C)])
    return columns, rows
