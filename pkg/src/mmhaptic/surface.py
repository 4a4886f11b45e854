"""Patient surface extraction.

Stitched depth-camera clouds are turned into a structured cylindrical
surface: for every slice along the body axis, rays are cast at equispaced
angles and a scalar Kalman filter sweeps around the slice, fusing the radii
of nearby points. Candidates with a larger radius get a smaller weight so
that points on the bed under the patient are suppressed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DegeneratePoseError,
    DomainError,
    EmptyInputError,
    ExtractionError,
)
from .geometry import TWO_PI, BodyAxis, Pose, to_cylindrical

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8  # m², used when all candidates share one radius
DEFAULT_SLICE_PITCH = 0.005
DEFAULT_NUM_ANGLES = 180


def merge_scans(clouds, poses) -> np.ndarray:
    """Transform each cloud by its camera pose and concatenate the results."""
    if len(clouds) != len(poses):
        raise ConfigurationError(f"{len(clouds)} clouds but {len(poses)} poses")
    if len(clouds) == 0:
        raise EmptyInputError("no scans to merge")
    merged = [pose.apply(np.asarray(c, dtype=float).reshape(-1, 3)) for c, pose in zip(clouds, poses)]
    out = np.vstack(merged)
    if not np.all(np.isfinite(out)):
        raise EmptyInputError("merged cloud contains non-finite coordinates")
    return out


def axis_from_probe_pose(
    pose: Pose,
    depth_offset: float,
    contact_normal=(0.0, 0.0, -1.0),
    body_axis=(1.0, 0.0, 0.0),
) -> BodyAxis:
    """Body axis from a tracked probe resting on the sternum.

    ``contact_normal`` is the probe-frame direction pointing into the patient
    and ``body_axis`` the probe-frame direction that should line up with the
    head-to-feet axis. The axis origin is pushed ``depth_offset`` metres into
    the body along the contact normal, and θ = 0 is placed at the sternum.
    """
    n_local = np.asarray(contact_normal, dtype=float)
    a_local = np.asarray(body_axis, dtype=float)
    if np.linalg.norm(n_local) == 0.0:
        raise DegeneratePoseError("contact normal has zero length")
    normal = pose.rotate(n_local / np.linalg.norm(n_local))
    direction = pose.rotate(a_local)
    if not np.isfinite(np.linalg.norm(direction)) or np.linalg.norm(direction) < 1e-12:
        raise DegeneratePoseError("body axis direction vanishes after applying the pose")
    origin = pose.translation + depth_offset * normal
    return BodyAxis(origin, direction, -normal)


@dataclass(frozen=True)
class ExtractionConfig:
    z_min: float
    z_max: float
    num_slices: int | None = None
    num_angles: int = DEFAULT_NUM_ANGLES
    candidate_threshold: float | None = None  # None: half the arc spacing at the median radius
    process_noise: float = 1e-6
    initial_variance: float = 1e-4

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ConfigurationError("z_min must be below z_max")
        if self.num_slices is None:
            n = max(1, int(round((self.z_max - self.z_min) / DEFAULT_SLICE_PITCH)))
            object.__setattr__(self, "num_slices", n)
        if self.num_slices < 1:
            raise ConfigurationError("num_slices must be positive")
        if self.num_angles < 3:
            raise ConfigurationError("num_angles must be at least 3")
        if self.candidate_threshold is not None and not self.candidate_threshold > 0:
            raise ConfigurationError("candidate_threshold must be positive")
        if self.process_noise < 0 or not self.initial_variance > 0:
            raise ConfigurationError("variances must be non-negative (initial variance positive)")

    @property
    def slice_pitch(self) -> float:
        return (self.z_max - self.z_min) / self.num_slices

    def slice_centers(self) -> np.ndarray:
        return self.z_min + (np.arange(self.num_slices) + 0.5) * self.slice_pitch

    def angles(self) -> np.ndarray:
        return TWO_PI * np.arange(self.num_angles) / self.num_angles


@dataclass
class CandidateSet:
    """Candidate radii of one angular cell; ``variance`` defaults to their spread."""

    radii: np.ndarray
    variance: float | None = None

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if self.variance is None:
            self.variance = float(np.var(self.radii)) if len(self.radii) else 0.0
        elif not self.variance >= 0:
            raise DomainError("candidate variance must be non-negative")

    @property
    def r_min(self) -> float:
        return float(self.radii.min())

    @property
    def r_max(self) -> float:
        return float(self.radii.max())

    def __len__(self):
        return len(self.radii)


@dataclass
class ExtractionDiagnostics:
    candidate_counts: np.ndarray  # (num_slices, num_angles)
    underflow_fallbacks: int = 0


@dataclass
class SurfaceModel:
    """Structured cylindrical surface: ``radii[j, k]`` at slice j, angle 2πk/N."""

    axis: BodyAxis
    slice_z: np.ndarray
    radii: np.ndarray
    diagnostics: ExtractionDiagnostics | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.slice_z = np.asarray(self.slice_z, dtype=float).reshape(-1)
        self.radii = np.asarray(self.radii, dtype=float).reshape(len(self.slice_z), -1)
        if self.radii.shape[1] < 3:
            raise ConfigurationError("surface needs at least 3 angles")
        if not (np.all(np.isfinite(self.radii)) and np.all(self.radii > 0)):
            raise ConfigurationError("surface radii must be positive and finite")
        if len(self.slice_z) > 1 and np.any(np.diff(self.slice_z) <= 0):
            raise ConfigurationError("slice_z must be strictly increasing")

    @property
    def num_angles(self) -> int:
        return self.radii.shape[1]

    @property
    def angles(self) -> np.ndarray:
        return TWO_PI * np.arange(self.num_angles) / self.num_angles

    def radius_at(self, theta, z) -> np.ndarray:
        """Bilinear radius: periodic in θ, clamped to the end slices in z."""
        theta = np.asarray(theta, dtype=float)
        z = np.asarray(z, dtype=float)
        n = self.num_angles
        u = np.mod(theta, TWO_PI) * (n / TWO_PI)
        k0 = np.floor(u).astype(np.int64)
        fu = u - k0
        k0 %= n
        k1 = (k0 + 1) % n
        if len(self.slice_z) == 1:
            j0 = j1 = np.zeros(np.shape(z), dtype=np.int64)
            fz = np.zeros(np.shape(z))
        else:
            zc = np.clip(z, self.slice_z[0], self.slice_z[-1])
            j0 = np.clip(np.searchsorted(self.slice_z, zc, side="right") - 1, 0, len(self.slice_z) - 2)
            j1 = j0 + 1
            fz = (zc - self.slice_z[j0]) / (self.slice_z[j1] - self.slice_z[j0])
        R = self.radii
        lo = R[j0, k0] * (1 - fu) + R[j0, k1] * fu
        hi = R[j1, k0] * (1 - fu) + R[j1, k1] * fu
        return lo * (1 - fz) + hi * fz


def collect_candidates(slice_points: np.ndarray, k: int, config: ExtractionConfig,
                       threshold: float | None = None) -> CandidateSet:
    """Radii of slice points within the threshold distance of ray k.

    ``slice_points`` holds cylindrical (r, θ, z) rows. Distance is measured
    to the half-line leaving the axis at angle 2πk/N, so points behind the
    axis only qualify when they sit within the threshold of the origin.
    """
    thr = config.candidate_threshold if threshold is None else threshold
    if thr is None:
        raise ConfigurationError("candidate threshold is unresolved")
    pts = np.asarray(slice_points, dtype=float).reshape(-1, 3)
    theta_k = TWO_PI * k / config.num_angles
    delta = pts[:, 1] - theta_k
    along = pts[:, 0] * np.cos(delta)
    dist = np.where(along >= 0.0, pts[:, 0] * np.abs(np.sin(delta)), pts[:, 0])
    return CandidateSet(pts[dist <= thr, 0])


def rank_weight(r_i, r_min: float, r_max: float):
    """Inverse rank weight (1 - (r - r_min)/(r_max - r_min))², 1 when r_max = r_min."""
    r = np.asarray(r_i, dtype=float)
    if np.any(r < r_min) or np.any(r > r_max):
        raise DomainError(f"radius outside [{r_min}, {r_max}]")
    if r_max == r_min:
        out = np.ones_like(r)
    else:
        out = (1.0 - (r - r_min) / (r_max - r_min)) ** 2
    return float(out) if out.ndim == 0 else out


def weighted_measurement(candidates: CandidateSet, prediction: float) -> tuple[float, bool]:
    """Fuse candidate radii into one radius measurement.

    Each candidate is scored by a Gaussian about the predicted radius times
    its rank weight; the scores are normalised into β and the measurement is
    Σ r_i β_i. Returns ``(y, fell_back)`` where ``fell_back`` flags the case
    in which every score underflowed and uniform weights were used.
    """
    r = candidates.radii
    if len(r) == 0:
        raise EmptyInputError("no candidates to weigh")
    S = max(candidates.variance, VARIANCE_FLOOR)
    D = rank_weight(r, candidates.r_min, candidates.r_max)
    p = np.exp(-((r - prediction) ** 2) / (2.0 * S)) / np.sqrt(2.0 * np.pi * S) * D
    total = p.sum()
    if not total > 0.0 or not np.isfinite(total):
        return float(r.mean()), True
    beta = p / total
    y = float(np.dot(r, beta))
    # guard the [r_min, r_max] bound against summation round-off
    return min(max(y, candidates.r_min), candidates.r_max), False


def kalman_update(prediction: float, gain: float, measurement: float) -> float:
    if not 0.0 <= gain <= 1.0:
        raise DomainError(f"Kalman gain {gain} outside [0, 1]")
    return prediction + gain * (measurement - prediction)


def _sweep_slice(candidate_sets, config: ExtractionConfig):
    n = config.num_angles
    pooled = [c.radii for c in candidate_sets if len(c)]
    d = float(np.median(np.concatenate(pooled)))
    P = config.initial_variance
    q = config.process_noise
    radii = np.empty(n)
    fallbacks = 0
    for sweep in range(2):  # first lap only warms up the state at θ = 0
        for k in range(n):
            P_pred = P + q
            cands = candidate_sets[k]
            if len(cands) == 0:
                P = P_pred
            else:
                S = max(cands.variance, VARIANCE_FLOOR)
                y, fell_back = weighted_measurement(cands, d)
                fallbacks += int(fell_back and sweep == 1)
                W = P_pred / (P_pred + S)
                d = kalman_update(d, W, y)
                d = min(max(d, cands.r_min), cands.r_max)
                P = (1.0 - W) * P_pred
            if sweep == 1:
                radii[k] = d
    return radii, fallbacks


def default_threshold(cyl: np.ndarray, num_angles: int) -> float:
    median_r = float(np.median(cyl[:, 0]))
    return 0.5 * TWO_PI * median_r / num_angles


def extract_surface(cloud, axis: BodyAxis, config: ExtractionConfig) -> SurfaceModel:
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInputError("point cloud is empty")
    cyl = to_cylindrical(pts, axis)
    in_range = (cyl[:, 2] >= config.z_min) & (cyl[:, 2] < config.z_max)
    cyl = cyl[in_range]
    if len(cyl) == 0:
        raise ExtractionError(f"no points between z={config.z_min} and z={config.z_max}")
    threshold = config.candidate_threshold
    if threshold is None:
        threshold = default_threshold(cyl, config.num_angles)
    slice_idx = np.minimum(((cyl[:, 2] - config.z_min) / config.slice_pitch).astype(np.int64),
                           config.num_slices - 1)
    order = np.argsort(slice_idx, kind="stable")
    bounds = np.searchsorted(slice_idx[order], np.arange(config.num_slices + 1))
    radii = np.empty((config.num_slices, config.num_angles))
    counts = np.zeros((config.num_slices, config.num_angles), dtype=np.int64)
    fallbacks = 0
    centers = config.slice_centers()
    for j in range(config.num_slices):
        slice_pts = cyl[order[bounds[j]:bounds[j + 1]]]
        sets = [collect_candidates(slice_pts, k, config, threshold) for k in range(config.num_angles)]
        counts[j] = [len(c) for c in sets]
        if counts[j].sum() == 0:
            raise ExtractionError(f"slice {j} (z={centers[j]:.4f} m) has no candidate points at any angle")
        radii[j], fb = _sweep_slice(sets, config)
        fallbacks += fb
    if fallbacks:
        log.warning("weight underflow in %d cells; uniform weights used", fallbacks)
    return SurfaceModel(axis, centers, radii, ExtractionDiagnostics(counts, fallbacks))
