"""Rigid poses, body-axis frames and cylindrical coordinate conversion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePoseError, InputError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Pose:
    """Rigid transform x_world = rotation @ x_local + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InputError("pose contains non-finite values")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InputError("pose rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_row12(cls, values) -> "Pose":
        """Build from 12 numbers: the 3x4 matrix [R | t] in row-major order."""
        v = np.asarray(values, dtype=float).reshape(3, 4)
        return cls(v[:, :3], v[:, 3])

    def to_row12(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]]).reshape(12)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def compose(self, other: "Pose") -> "Pose":
        """Return self ∘ other (apply ``other`` first)."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


# Both names are used in the domain: a depth-camera pose and a probe pose.
ScanPose = Pose
ProbePose = Pose


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a rotation of ``angle`` radians about ``axis``."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def _default_reference(z: np.ndarray) -> np.ndarray:
    # world basis vector least aligned with z, made orthogonal to it
    e = np.zeros(3)
    e[int(np.argmin(np.abs(z)))] = 1.0
    x = e - np.dot(e, z) * z
    return x / np.linalg.norm(x)


@dataclass(frozen=True)
class BodyAxis:
    """Longitudinal body axis.

    ``x_direction`` fixes where θ = 0 points. When omitted it is derived
    deterministically from ``z_direction``; pass it explicitly whenever the
    surface must be invariant under rigid motion of the whole scene.
    """

    origin: np.ndarray
    z_direction: np.ndarray
    x_direction: np.ndarray | None = field(default=None)

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        z = np.asarray(self.z_direction, dtype=float).reshape(3)
        nz = np.linalg.norm(z)
        if not np.isfinite(nz) or nz < 1e-12 or not np.all(np.isfinite(o)):
            raise DegeneratePoseError("body axis direction has zero length")
        z = z / nz
        if self.x_direction is None:
            x = _default_reference(z)
        else:
            x = np.asarray(self.x_direction, dtype=float).reshape(3)
            x = x - np.dot(x, z) * z
            nx = np.linalg.norm(x)
            if nx < 1e-9:
                x = _default_reference(z)
            else:
                x = x / nx
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "z_direction", z)
        object.__setattr__(self, "x_direction", x)

    @property
    def frame(self) -> np.ndarray:
        """Rows are the axis-frame unit vectors (x, y, z) in world coordinates."""
        z = self.z_direction
        x = self.x_direction
        return np.vstack([x, np.cross(z, x), z])

    def transformed(self, pose: Pose) -> "BodyAxis":
        return BodyAxis(pose.apply(self.origin), pose.rotate(self.z_direction), pose.rotate(self.x_direction))


def to_cylindrical(points, axis: BodyAxis) -> np.ndarray:
    """Express world points as (r, θ, z) about ``axis``; θ in [0, 2π).

    Points on the axis get r = 0 and θ = 0.
    """
    local = (np.asarray(points, dtype=float).reshape(-1, 3) - axis.origin) @ axis.frame.T
    r = np.hypot(local[:, 0], local[:, 1])
    theta = np.mod(np.arctan2(local[:, 1], local[:, 0]), TWO_PI)
    theta[r == 0.0] = 0.0
    # mod can round a tiny negative angle up to exactly 2π
    theta[theta >= TWO_PI] = 0.0
    return np.column_stack([r, theta, local[:, 2]])


def from_cylindrical(cyl, axis: BodyAxis) -> np.ndarray:
    c = np.asarray(cyl, dtype=float).reshape(-1, 3)
    local = np.column_stack([c[:, 0] * np.cos(c[:, 1]), c[:, 0] * np.sin(c[:, 1]), c[:, 2]])
    return local @ axis.frame + axis.origin
