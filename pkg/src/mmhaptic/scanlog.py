"""Timestamped pose/wrench logs.

One sample per line, whitespace separated, ``#`` starts a comment::

    t  R00 R01 R02 tx  R10 R11 R12 ty  R20 R21 R22 tz  fx fy fz  mx my mz

Times in seconds, translation in metres, force in N, torque in N·m. Pose-only
files (the first 13 columns) are accepted wherever only poses are needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, InputError
from .geometry import Pose

NOMINAL_RATE_HZ = 20.0
RECORD_COLUMNS = 19
POSE_COLUMNS = 13


@dataclass(frozen=True)
class ScanRecord:
    t: float
    pose: Pose
    force: np.ndarray
    torque: np.ndarray

    def to_row(self) -> np.ndarray:
        return np.concatenate([[self.t], self.pose.to_row12(), self.force, self.torque])

    @classmethod
    def from_row(cls, row) -> "ScanRecord":
        row = np.asarray(row, dtype=float)
        force = row[13:16] if len(row) >= 16 else np.zeros(3)
        torque = row[16:19] if len(row) >= 19 else np.zeros(3)
        return cls(float(row[0]), Pose.from_row12(row[1:13]), np.array(force), np.array(torque))


def format_row(values) -> str:
    return " ".join(f"{v:.17g}" for v in values)


def write_scan_log(path, records, header: str | None = None) -> None:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.extend(format_row(rec.to_row()) for rec in records)
    Path(path).write_text("\n".join(lines) + "\n")


def _read_rows(path) -> list[list[float]]:
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([float(x) for x in line.split()])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
    return rows


def read_scan_log(path, require_wrench: bool = True) -> list[ScanRecord]:
    rows = _read_rows(path)
    if not rows:
        raise EmptyInputError(f"{path} contains no samples")
    allowed = {RECORD_COLUMNS} if require_wrench else {RECORD_COLUMNS, POSE_COLUMNS}
    records = []
    for i, row in enumerate(rows):
        if len(row) not in allowed:
            raise InputError(f"{path}: sample {i} has {len(row)} columns, expected {sorted(allowed)}")
        records.append(ScanRecord.from_row(row))
    times = np.array([r.t for r in records])
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        raise InputError(f"{path}: timestamps must be strictly increasing")
    return records
