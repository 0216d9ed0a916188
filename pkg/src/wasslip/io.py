"""Deterministic serialization helpers.

Every report the toolkit emits must be byte-identical across reruns with the
same seed, so floats are always rendered with 17 significant digits (enough to
round-trip an IEEE-754 double exactly) and JSON is produced by a small
in-repo emitter with a fixed layout instead of ``json.dumps``.
"""

from __future__ import annotations

import hashlib
import json
import math
import numbers
from pathlib import Path
from typing import Any, Iterable, Sequence


def fmt_float(x: float) -> str:
    """Render a finite float with 17 significant digits."""
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite value cannot be serialized: {x!r}")
    return format(x, ".17g")


def _render(value: Any, indent: int, out: list) -> None:
    pad = "  " * indent
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, str):
        out.append(json.dumps(value))
    elif isinstance(value, numbers.Integral):
        out.append(str(int(value)))
    elif isinstance(value, numbers.Real):
        out.append(fmt_float(value))
    elif isinstance(value, dict):
        if not value:
            out.append("{}")
            return
        out.append("{\n")
        items = list(value.items())
        for i, (key, item) in enumerate(items):
            if not isinstance(key, str):
                raise TypeError(f"JSON keys must be strings, got {key!r}")
            out.append(pad + "  " + json.dumps(key) + ": ")
            _render(item, indent + 1, out)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(value, (list, tuple)):
        if not len(value):
            out.append("[]")
            return
        out.append("[\n")
        for i, item in enumerate(value):
            out.append(pad + "  ")
            _render(item, indent + 1, out)
            out.append(",\n" if i < len(value) - 1 else "\n")
        out.append(pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(value: Any) -> str:
    out: list = []
    _render(value, 0, out)
    out.append("\n")
    return "".join(out)


def dump_json(value: Any, path) -> None:
    Path(path).write_text(dumps(value), encoding="utf-8")


def load_json(path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def format_cell(cell: Any) -> str:
    if isinstance(cell, str):
        if "," in cell or "\n" in cell:
            raise ValueError(f"CSV cell may not contain separators: {cell!r}")
        return cell
    if isinstance(cell, bool):
        return "true" if cell else "false"
    if isinstance(cell, numbers.Integral):
        return str(int(cell))
    if isinstance(cell, numbers.Real):
        return fmt_float(cell)
    raise TypeError(f"cannot format CSV cell of type {type(cell).__name__}")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_cell(c) for c in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"empty CSV file: {path}")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
