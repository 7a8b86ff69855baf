"""CSV read/write with a leading ``#`` provenance comment and 9 significant digits."""
from __future__ import annotations

import csv
import io

import numpy as np

from .errors import ValidationError


def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def write_csv(path, header, rows, comment: str | None = None):
    buf = io.StringIO()
    if comment:
        for line in comment.splitlines():
            buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else format_value(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path):
    """Return ``(header, rows, comments)`` with rows as lists of strings."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    comments = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise ValidationError(f"{path}: no header row")
    reader = list(csv.reader(body))
    return reader[0], reader[1:], comments


def read_numeric_csv(path, expected_header=None):
    header, rows, comments = read_csv(path)
    if expected_header is not None and list(header) != list(expected_header):
        raise ValidationError(f"{path}: header {header} != expected {list(expected_header)}")
    try:
        data = np.array([[float(v) for v in row] for row in rows], dtype=np.float64).reshape(len(rows), len(header))
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from None
    return header, data, comments
