"""CSV and JSON writers with embedded provenance.

Every CSV starts with one comment line holding the JSON config that produced
it, so any output file can be regenerated byte-for-byte from its own header.
Floats are written with 17 significant digits and '.' as the decimal
separator; rows use CRLF line endings.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence


def fmt(value) -> str:
    """Render one cell: full-precision floats, plain ints and strings."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def provenance_line(config: Mapping | None) -> str | None:
    if config is None:
        return None
    return "# config " + json.dumps(config, sort_keys=True, separators=(",", ":"))


def write_csv(
    path,
    fieldnames: Sequence[str],
    rows: Iterable[Sequence],
    config: Mapping | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        header = provenance_line(config)
        if header is not None:
            fh.write(header + "\r\n")
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_json(path, payload: Mapping) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
