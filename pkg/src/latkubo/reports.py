"""Report rows and delimited/JSON writers.

CSV uses '.' decimals and full-precision shortest-roundtrip floats, with a
fixed column order; JSON summaries carry a schema_version and round-trip
all floats bit exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import IoError

CSV_COLUMNS = ["route", "eps", "phi_k", "beta", "seed", "k", "j",
               "sigma", "sigma_rescaled_2pi", "est_error", "wall_ms", "error"]

TWO_PI = 6.283185307179586


@dataclass
class ReportRow:
    route: str
    k: int
    j: int
    sigma: float | None = None
    eps: float | None = None
    phi_k: float | None = None
    beta: float | None = None
    seed: int | None = None
    est_error: float | None = None
    wall_ms: float | None = None
    error: str = ""

    @property
    def sigma_rescaled_2pi(self) -> float | None:
        return None if self.sigma is None else TWO_PI * self.sigma


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, rows: list[ReportRow]) -> Path:
    path = Path(path)
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for row in rows:
                record = {**asdict(row), "sigma_rescaled_2pi": row.sigma_rescaled_2pi}
                fh.write(",".join(_cell(record[c]) for c in CSV_COLUMNS) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def write_json(path: str | Path, summary: dict) -> Path:
    path = Path(path)
    payload = {"schema_version": 1, **summary}
    try:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path: str | Path) -> dict:
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)
