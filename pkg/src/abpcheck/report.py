"""Byte-deterministic CSV and JSON reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, fields
from pathlib import Path

FORMATS = ("csv", "json")


class ReportError(OSError):
    """Report could not be produced or written."""


def format_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def _json_value(value):
    # JSON has no NaN or infinity; they travel as the same strings the CSV uses
    if isinstance(value, float):
        return value if math.isfinite(value) else format_float(value)
    return value


def render(rows, fmt: str = "csv") -> str:
    """Report text for a non-empty list of dataclass rows of one type."""
    if not rows:
        raise ReportError("no rows to report")
    if fmt not in FORMATS:
        raise ReportError(f"unknown report format {fmt!r}")
    columns = [f.name for f in fields(rows[0])]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(getattr(row, c)) for c in columns])
        return buf.getvalue()
    records = [{k: _json_value(v) for k, v in asdict(row).items()} for row in rows]
    # repr of a float is the shortest string that round-trips, so numbers survive exactly
    return json.dumps({"columns": columns, "rows": records}, sort_keys=True, indent=1, allow_nan=False) + "\n"


def emit_report(rows, path, fmt: str = "csv") -> Path:
    text = render(rows, fmt)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ReportError(f"cannot write report {path}: {exc}") from exc
    return path


def parse_csv(text: str) -> list[dict]:
    """Rows of a CSV report as dictionaries of strings."""
    return list(csv.DictReader(io.StringIO(text)))


def parse_json(text: str) -> list[dict]:
    return json.loads(text)["rows"]


def parse_number(text) -> float:
    """Inverse of the float formatting used in both formats."""
    return float(text)
