"""CSV result tables with a provenance header.

A table file starts with ``# key: value`` lines (command, config hash, seed,
creation time, package version) followed by a plain CSV body. Floats are
written with 17 significant digits so values survive a round trip exactly.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

import numpy as np


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return f"{value:.17g}"
    if value is None:
        return ""
    return str(value)


def parse_cell(text: str) -> Any:
    if text in ("true", "false"):
        return text == "true"
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        return "unknown"


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: Sequence[dict], columns: Sequence[str] | None = None) -> "ResultTable":
        if columns is None:
            columns = []
            for r in rows:
                columns += [c for c in r if c not in columns]
        return cls(list(columns), [dict(r) for r in rows])

    def body(self) -> str:
        """CSV text without the provenance header."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([format_cell(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def write(self, path, command: str, config: dict, seed: int | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "command": command,
            "config_sha256": config_hash(config),
            "config": json.dumps(config, sort_keys=True, separators=(",", ":"), default=str),
            "seed": "" if seed is None else str(seed),
            "version": _version(),
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        meta.update(self.meta)
        header = "".join(f"# {k}: {v}\n" for k, v in meta.items())
        path.write_text(header + self.body())
        return path

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]


def read_table(path) -> ResultTable:
    meta: dict[str, str] = {}
    body_lines = []
    for line in Path(path).read_text().splitlines(keepends=True):
        if line.startswith("#") and not body_lines:
            key, _, value = line[1:].strip().partition(":")
            meta[key.strip()] = value.strip()
        else:
            body_lines.append(line)
    reader = csv.reader(io.StringIO("".join(body_lines)))
    try:
        columns = next(reader)
    except StopIteration:
        return ResultTable([], [], meta)
    rows = [{c: parse_cell(v) for c, v in zip(columns, rec)} for rec in reader if rec]
    return ResultTable(columns, rows, meta)


def strip_header(text: str) -> str:
    """Drop provenance lines; what remains is comparable across runs."""
    return "".join(l for l in text.splitlines(keepends=True) if not l.startswith("#"))
