"""Force error metrics."""

from __future__ import annotations

import math

import numpy as np

ANGLE_FLOOR = 1e-6  # N; below this a force has no usable direction


def magnitude_error(f_est, f_meas) -> float:
    """| ‖f_est‖ − ‖f_meas‖ | in Newtons."""
    return abs(float(np.linalg.norm(f_est)) - float(np.linalg.norm(f_meas)))


def angle_error(f_est, f_meas, floor: float = ANGLE_FLOOR) -> float:
    """Angle between two forces in degrees, NaN when either is below ``floor``."""
    a = np.asarray(f_est, dtype=float)
    b = np.asarray(f_meas, dtype=float)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < floor or nb < floor:
        return math.nan
    c = float(np.dot(a / na, b / nb))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def mean_magnitude_error(estimates, measured) -> float:
    errs = [magnitude_error(e, m) for e, m in zip(estimates, measured)]
    return math.fsum(errs) / len(errs) if errs else math.nan
