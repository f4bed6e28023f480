"""Result tables and their CSV form.

A CSV file starts with ``# key: value`` provenance lines, then a header row
and the data rows.  Only the provenance block carries a timestamp, so two
runs of the same config and seed produce identical bodies.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__


def format_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float) or hasattr(v, "dtype"):
        x = float(v)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.16e}"
    return str(v)


@dataclass
class ResultTable:
    name: str
    columns: list
    rows: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, row) -> None:
        if isinstance(row, dict):
            missing = set(self.columns) - set(row)
            if missing:
                raise ValueError(f"row lacks columns {sorted(missing)}")
            row = [row[c] for c in self.columns]
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} entries, table has {len(self.columns)} columns")
        self.rows.append(list(row))

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def sort_by(self, name: str, reverse: bool = False) -> None:
        k = self.columns.index(name)
        self.rows.sort(key=lambda r: r[k], reverse=reverse)

    def body(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([format_value(v) for v in r])
        return buf.getvalue()

    def to_csv(self) -> str:
        head = {"table": self.name, "toolkit_version": __version__,
                "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                **self.provenance}
        lines = [f"# {k}: {v}" for k, v in head.items()]
        return "\n".join(lines) + "\n" + self.body()

    def write(self, directory, stem: str | None = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tag = self.provenance.get("config_hash", "nohash")
        path = directory / f"{stem or self.name}_{tag}.csv"
        path.write_text(self.to_csv())
        return path


def read_csv(path) -> ResultTable:
    """Inverse of :meth:`ResultTable.write`; numeric cells become floats."""
    text = Path(path).read_text().splitlines()
    prov = {}
    k = 0
    while k < len(text) and text[k].startswith("#"):
        key, _, val = text[k][1:].partition(":")
        prov[key.strip()] = val.strip()
        k += 1
    reader = csv.reader(text[k:])
    columns = next(reader)
    table = ResultTable(prov.pop("table", Path(path).stem), columns, provenance=prov)
    for r in reader:
        out = []
        for v in r:
            try:
                out.append(float(v))
            except ValueError:
                out.append(v)
        table.rows.append(out)
    return table


def body_of(path) -> str:
    """The CSV text below the provenance block."""
    return "".join(line for line in Path(path).read_text().splitlines(keepends=True)
                   if not line.startswith("#"))
