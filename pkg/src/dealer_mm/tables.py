"""CSV tables: header row, comma separator, 17 significant digits."""

from __future__ import annotations

import csv
import math
from pathlib import Path


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool,)):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    value = float(value)
    if math.isnan(value):
        return ""
    return "%.17g" % value


def parse_cell(text: str):
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        return text


def write_table(path: str | Path, header: list[str], rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"{path.name}: row width {len(row)} != header width {len(header)}")
            writer.writerow([format_cell(v) for v in row])
    return path


def read_table(path: str | Path) -> tuple[list[str], list[list]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row missing") from None
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            rows.append([parse_cell(c) for c in raw])
    return header, rows
