"""Replay evaluation, report tables and heatmap export.

Key-value report keys (one ``key = value`` per line, ``#`` comments)::

    samples                 number of replayed samples
    mean_magnitude_N        mean | ‖f_est‖ − ‖f_meas‖ |
    median_magnitude_N
    mean_angle_deg          mean angle over samples with both forces above the floor
    median_angle_deg
    angle_samples           samples entering the angle statistics
    angle_excluded          samples left out of them
    magnitude.<i>           per-sample magnitude error
    angle.<i>               per-sample angle error, ``nan`` when excluded

Suite reports prefix every key with ``<table>.<sample>.<kind>.``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CoverageError, InputError
from .field import CylindricalGrid, PotentialField
from .metrics import angle_error, magnitude_error
from .render import PointShell, contact_rows
from .surface import SurfaceModel

TABLE_TITLES = {
    ("plain", "same"): "Mean error for model without force augmentation, same trajectory",
    ("augmented", "same"): "Mean error for force augmented model on same trajectory",
    ("plain", "new"): "Mean error for model without force augmentation, new trajectory",
    ("augmented", "new"): "Mean error for force augmented model on new trajectory",
}
KINDS = ("press", "sweep")


def _fmean(values) -> float:
    values = [v for v in values if not math.isnan(v)]
    return math.fsum(values) / len(values) if values else math.nan


def _median(values) -> float:
    values = [v for v in values if not math.isnan(v)]
    return float(np.median(values)) if values else math.nan


@dataclass
class ErrorReport:
    """Per-sample force errors of one model replayed over one scan."""

    magnitude: np.ndarray
    angle: np.ndarray  # NaN where a force is below the angle floor

    def __post_init__(self):
        self.magnitude = np.asarray(self.magnitude, dtype=float)
        self.angle = np.asarray(self.angle, dtype=float)

    @property
    def samples(self) -> int:
        return len(self.magnitude)

    @property
    def mean_magnitude(self) -> float:
        return _fmean(self.magnitude)

    @property
    def median_magnitude(self) -> float:
        return _median(self.magnitude)

    @property
    def mean_angle(self) -> float:
        return _fmean(self.angle)

    @property
    def median_angle(self) -> float:
        return _median(self.angle)

    @property
    def angle_excluded(self) -> int:
        return int(np.isnan(self.angle).sum())

    def summary(self) -> dict:
        return {
            "samples": self.samples,
            "mean_magnitude_N": self.mean_magnitude,
            "median_magnitude_N": self.median_magnitude,
            "mean_angle_deg": self.mean_angle,
            "median_angle_deg": self.median_angle,
            "angle_samples": self.samples - self.angle_excluded,
            "angle_excluded": self.angle_excluded,
        }

    def to_keyvalue(self, per_sample: bool = True) -> dict:
        out = self.summary()
        if per_sample:
            for i, (m, a) in enumerate(zip(self.magnitude, self.angle)):
                out[f"magnitude.{i}"] = m
                out[f"angle.{i}"] = a
        return out


def rendered_forces(field_: PotentialField, records, shell: PointShell, grid: CylindricalGrid,
                    surface: SurfaceModel) -> np.ndarray:
    out = np.zeros((len(records), 3))
    for i, rec in enumerate(records):
        try:
            rows = contact_rows(shell, rec.pose, grid, surface)
        except CoverageError as exc:
            exc.sample_index = i
            raise
        out[i] = rows.N() @ field_.values
    return out


def evaluate(field_: PotentialField, records, shell: PointShell, grid: CylindricalGrid,
             surface: SurfaceModel) -> ErrorReport:
    """Replay every logged pose against ``field_`` and score the rendered force."""
    if len(records) == 0:
        raise InputError("cannot evaluate an empty scan")
    est = rendered_forces(field_, records, shell, grid, surface)
    mag = [magnitude_error(e, r.force) for e, r in zip(est, records)]
    ang = [angle_error(e, r.force) for e, r in zip(est, records)]
    return ErrorReport(np.array(mag), np.array(ang))


def paired_angle_means(a: ErrorReport, b: ErrorReport) -> tuple[float, float, int]:
    """Mean angle errors of two reports over the samples both define."""
    both = ~(np.isnan(a.angle) | np.isnan(b.angle))
    return _fmean(a.angle[both]), _fmean(b.angle[both]), int(both.sum())


class SuiteReport:
    """Four tables: plain/augmented model × same/new trajectory.

    Each table has one row per sample (phantom or subject) and the columns
    press/sweep × magnitude/angle.
    """

    def __init__(self):
        self.cells: dict[tuple[str, str], dict[str, dict[str, ErrorReport]]] = {k: {} for k in TABLE_TITLES}

    def add(self, model: str, trajectory: str, sample: str, kind: str, report: ErrorReport) -> None:
        if (model, trajectory) not in self.cells:
            raise InputError(f"unknown table ({model}, {trajectory})")
        if kind not in KINDS:
            raise InputError(f"unknown trajectory kind {kind!r}")
        self.cells[(model, trajectory)].setdefault(sample, {})[kind] = report

    def get(self, model: str, trajectory: str, sample: str, kind: str) -> ErrorReport | None:
        return self.cells[(model, trajectory)].get(sample, {}).get(kind)

    def samples(self) -> list[str]:
        seen = []
        for table in self.cells.values():
            for s in table:
                if s not in seen:
                    seen.append(s)
        return seen

    def format_table(self, model: str, trajectory: str) -> str:
        header = ["Sample"] + [f"{k} {m}" for k in KINDS for m in ("mag (N)", "angle (deg)")]
        rows = []
        for sample in self.samples():
            row = [sample]
            for kind in KINDS:
                rep = self.get(model, trajectory, sample, kind)
                row += ["-", "-"] if rep is None else [f"{rep.mean_magnitude:.3f}", f"{rep.mean_angle:.2f}"]
            rows.append(row)
        widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
        lines = [TABLE_TITLES[(model, trajectory)],
                 "  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
        lines += ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                  for r in rows]
        return "\n".join(lines)

    def format(self) -> str:
        return "\n\n".join(self.format_table(m, t) for (m, t) in TABLE_TITLES)

    def to_keyvalue(self) -> dict:
        out = {}
        for (model, trajectory), table in self.cells.items():
            for sample, kinds in table.items():
                for kind, rep in kinds.items():
                    for k, v in rep.summary().items():
                        out[f"{model}_{trajectory}.{sample}.{kind}.{k}"] = v
        return out


def format_report(report: ErrorReport, title: str | None = None) -> str:
    s = report.summary()
    lines = [title] if title else []
    lines.append(f"{'samples':<22}{s['samples']:>12d}")
    for key in ("mean_magnitude_N", "median_magnitude_N", "mean_angle_deg", "median_angle_deg"):
        lines.append(f"{key:<22}{s[key]:>12.4f}")
    lines.append(f"{'angle_excluded':<22}{s['angle_excluded']:>12d}")
    return "\n".join(lines)


def _format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def write_keyvalue(path, values: dict, header: str | None = None) -> None:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines += [f"{k} = {_format_value(v)}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_keyvalue(path) -> dict:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"{path}: malformed line {raw!r}")
        value = value.strip()
        try:
            out[key.strip()] = int(value)
        except ValueError:
            try:
                out[key.strip()] = float(value)
            except ValueError:
                out[key.strip()] = value
    return out


PGM_MAXVAL = 65535


def heatmap_matrix(field_: PotentialField, iz: int, reference: PotentialField | None = None) -> np.ndarray:
    """(nr, nθ) slice of |p|, or of |p − p_ref| when ``reference`` is given."""
    grid = field_.grid
    if not 0 <= iz < grid.nz:
        raise InputError(f"slice index {iz} outside [0, {grid.nz})")
    values = field_.as_array()[:, :, iz]
    if reference is not None:
        if reference.grid != grid:
            raise InputError("reference field lives on a different grid")
        values = values - reference.as_array()[:, :, iz]
    return np.abs(values)


def export_heatmap(path, field_: PotentialField, iz: int, reference: PotentialField | None = None) -> np.ndarray:
    """Write a transverse slice as a plain PGM; lighter pixels mean larger values.

    Rows are radial bins (inner first), columns angular bins. Returns the
    unscaled matrix that was written.
    """
    m = heatmap_matrix(field_, iz, reference)
    top = float(m.max())
    pix = np.zeros(m.shape, dtype=np.int64) if top == 0 else np.rint(m / top * PGM_MAXVAL).astype(np.int64)
    nr, nt = m.shape
    lines = ["P2", f"# max {top!r}", f"{nt} {nr}", str(PGM_MAXVAL)]
    lines += [" ".join(map(str, row)) for row in pix]
    Path(path).write_text("\n".join(lines) + "\n")
    return m


def read_pgm(path) -> np.ndarray:
    tokens = []
    for raw in Path(path).read_text().splitlines():
        tokens += raw.split("#", 1)[0].split()
    if not tokens or tokens[0] != "P2":
        raise InputError(f"{path} is not a plain PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.array(tokens[4:4 + w * h], dtype=np.int64).reshape(h, w)
