"""CSV tables with a ``#`` provenance header.

Numbers are written with 17 significant digits, which round-trips every
IEEE double exactly. Missing values are written as ``NA``. Two marker lines
may follow the data: ``# EMPTY`` for a valid table with no rows and
``# FAILED: <reason>`` for a partial table cut short by a numerical failure.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

NA = "NA"


@dataclass
class ExportTable:
    columns: Sequence[str]
    data: np.ndarray
    header: dict = field(default_factory=dict)
    failure: Optional[str] = None

    def __post_init__(self):
        self.columns = list(self.columns)
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(self.columns))


def format_number(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return NA
    return format(x, ".17g")


def parse_number(s: str) -> float:
    s = s.strip()
    return float("nan") if s == NA else float(s)


def provenance(config_hash: str, command: str, **extra) -> dict:
    import scipy

    from . import __version__

    out = {"command": command, "config_hash": config_hash, "epilab": __version__,
           "numpy": np.__version__, "scipy": scipy.__version__}
    out.update({k: str(v) for k, v in extra.items()})
    return out


def to_text(table: ExportTable) -> str:
    buf = io.StringIO()
    for k, v in table.header.items():
        buf.write(f"# {k}: {v}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.data:
        writer.writerow([format_number(v) for v in row])
    if table.failure is not None:
        buf.write(f"# FAILED: {table.failure}\n")
    elif len(table.data) == 0:
        buf.write("# EMPTY\n")
    return buf.getvalue()


def write_table(path, table: ExportTable) -> None:
    Path(path).write_text(to_text(table))


def from_text(text: str) -> ExportTable:
    header, failure = {}, None
    body = []
    for line in text.splitlines():
        if line.startswith("# FAILED:"):
            failure = line[len("# FAILED:"):].strip()
        elif line.startswith("# EMPTY"):
            continue
        elif line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
        elif line.strip():
            body.append(line)
    if not body:
        raise ValueError("table has no column header")
    rows = list(csv.reader(body))
    columns = rows[0]
    data = np.array([[parse_number(v) for v in r] for r in rows[1:]], dtype=float)
    if any(len(r) != len(columns) for r in rows[1:]):
        raise ValueError("table is not rectangular")
    return ExportTable(columns, data.reshape(-1, len(columns)), header, failure)


def read_table(path) -> ExportTable:
    return from_text(Path(path).read_text())
