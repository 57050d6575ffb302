"""JSON tables and JSON/CSV reports.

A table file is ``{"space": {"x_card": a, "y_card": b}, "n": n, "values": [...]}``
with ``values`` flattened in C order (last coordinate is the test
observation).  Entries are numbers, the string ``"inf"``, or rational
strings such as ``"3/2"``; any rational entry makes the table exact.
"""

from __future__ import annotations

import csv
import io
import json
import math
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from .space import FnTable, ObservationSpace


class TableFormatError(ValueError):
    """Malformed table or report file."""


def _decode_entry(v):
    if isinstance(v, bool):
        raise TableFormatError(f"boolean table entry {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        if v == "inf":
            return math.inf
        try:
            return Fraction(v)
        except ValueError:
            raise TableFormatError(f"bad table entry {v!r}") from None
    raise TableFormatError(f"bad table entry {v!r}")


def _encode_entry(v):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else str(v.numerator)
    if isinstance(v, int):
        return str(v)
    v = float(v)
    return "inf" if math.isinf(v) else v


def table_from_dict(data: dict) -> FnTable:
    try:
        space = ObservationSpace(int(data["space"]["x_card"]), int(data["space"]["y_card"]))
        n = int(data["n"])
        raw = data["values"]
    except (KeyError, TypeError) as exc:
        raise TableFormatError(f"table file is missing a field: {exc}") from None
    if not isinstance(raw, list):
        raise TableFormatError("values must be a flat list")
    entries = [_decode_entry(v) for v in raw]
    expected = space.z_card ** (n + 1)
    if len(entries) != expected:
        raise TableFormatError(
            f"dimension mismatch: {len(entries)} values, expected {space.z_card}^{n + 1} = {expected}")
    if any(isinstance(v, Fraction) for v in entries):
        if any(math.isinf(v) for v in entries if isinstance(v, float)):
            raise TableFormatError("exact tables cannot hold inf")
        values = np.empty(len(entries), dtype=object)
        values[:] = [Fraction(v) for v in entries]
    else:
        values = np.array(entries, dtype=float)
    return FnTable(space, n, values)


def table_to_dict(table: FnTable) -> dict:
    return {
        "space": {"x_card": table.space.x_card, "y_card": table.space.y_card},
        "n": table.n,
        "values": [_encode_entry(v) for v in table.values.reshape(-1)],
    }


def load_table(path: str | Path) -> FnTable:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise TableFormatError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(data, dict):
        raise TableFormatError(f"{path}: expected a JSON object")
    return table_from_dict(data)


def save_table(table: FnTable, path: str | Path) -> None:
    Path(path).write_text(json.dumps(table_to_dict(table)))


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=False)


def report_csv(report: dict) -> str:
    """One row per entry of ``report["results"]``, nested fields flattened with dots."""
    rows = [_flatten(r) for r in _jsonable(report).get("results", [])]
    columns: list[str] = []
    for r in rows:
        columns += [c for c in r if c not in columns]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _flatten(obj, prefix: str = "") -> dict:
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}{k}."))
        return out
    if isinstance(obj, list):
        return {prefix[:-1]: json.dumps(obj)}
    return {prefix[:-1]: obj}


def save_report(report: dict, path: str | Path, fmt: str = "json") -> None:
    text = report_csv(report) if fmt == "csv" else report_json(report)
    Path(path).write_text(text)
