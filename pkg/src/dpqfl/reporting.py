"""Deterministic CSV/JSON writers shared by every output artifact."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

SCHEMA_VERSION = "1"


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def write_csv(path, header, rows) -> Path:
    """Comma separated, ``.`` decimals, LF line endings, header first."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row[k] for k in header]
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, payload) -> Path:
    path = Path(path)
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
    path.write_text(text + "\n")
    return path
