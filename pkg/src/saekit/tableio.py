"""Reading and writing of small delimited tables (comma, UTF-8, header row).

Numeric cells are written with ``repr`` (shortest round-trip form), so a
table survives a write/read cycle bit-exactly and identical inputs always
produce identical bytes.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .errors import InputError


def read_table(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    """Read a delimited file into (header, rows-as-dicts). Cells stay strings."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"empty file: {path}") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, parts in enumerate(reader, start=2):
            if not parts or all(p.strip() == "" for p in parts):
                continue
            if len(parts) != len(header):
                raise InputError(
                    f"{path}: line {lineno} has {len(parts)} fields, expected {len(header)}"
                )
            rows.append(dict(zip(header, (p.strip() for p in parts))))
    return header, rows


def parse_float(cell: str, *, context: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise InputError(f"{context}: cannot parse '{cell}' as a number") from None


def format_cell(value) -> str:
    """Deterministic cell formatting: round-trip floats, plain ints/strings."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def render_table(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def write_table(path: str | Path, header: list[str], rows: list[list]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(render_table(header, rows))
