"""CSV and JSON helpers with lossless float formatting.

CSV files are UTF-8, comma separated, with a header row and one row per time
step. Floats are written with ``repr`` (shortest round-trip form).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import SpecError


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


def write_csv(path, header, rows) -> None:
    """Write rows (a 2-d array or an iterable of sequences) under ``header``."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            if len(row) != len(header):
                raise SpecError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([format_value(v) for v in row])


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Numeric CSV with a header row -> (names, T x k array)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SpecError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    try:
        data = np.array([[float(x) for x in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise SpecError(f"{path}: non-numeric entry ({exc})") from None
    if data.size and data.shape[1] != len(header):
        raise SpecError(f"{path}: rows and header differ in width")
    return header, data.reshape(len(rows), len(header))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    """Deterministic JSON: sorted keys, non-finite floats as null."""
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")
