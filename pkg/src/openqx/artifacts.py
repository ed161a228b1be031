"""CSV and JSON writers with a fixed numeric format."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

DIGITS = 15


def fmt(x: float) -> str:
    x = float(x)
    if x == 0:
        return "0"
    return f"{x:.{DIGITS}g}"


def matrix_columns(prefix: str, d: int) -> list[str]:
    """Column names ``<prefix>_<i><j>_re`` / ``_im`` in row-major order, 1-based."""
    return [f"{prefix}_{i + 1}{j + 1}_{part}" for i in range(d) for j in range(d) for part in ("re", "im")]


def matrix_values(m: np.ndarray) -> list[str]:
    out = []
    for z in np.asarray(m).ravel():
        out += [fmt(z.real), fmt(z.imag)]
    return out


def write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, str) else fmt(r) for r in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"re": _jsonable(obj.real.tolist()), "im": _jsonable(obj.imag.tolist())}
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(fmt(x)) if np.isfinite(x) else None
    return obj


def write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path
