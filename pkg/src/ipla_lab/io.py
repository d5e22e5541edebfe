"""CSV output shared by every command.

Each file starts with a ``# schema_version,1`` comment line followed by a
header row. Quoting follows RFC 4180 (CRLF line endings). Floats are written
with ``repr`` so they round-trip exactly.
"""

import csv
import math
from pathlib import Path

SCHEMA_VERSION = 1


def format_value(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    if hasattr(v, "item"):  # numpy scalars
        return format_value(v.item())
    return str(v)


def write_csv(path, header, rows):
    """Write ``rows`` under ``header``; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema_version,{SCHEMA_VERSION}\r\n")
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv(path):
    """Inverse of :func:`write_csv`: returns ``(header, rows)`` of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\r\n")
        if first != f"# schema_version,{SCHEMA_VERSION}":
            raise ValueError(f"{path}: missing schema_version line")
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)
