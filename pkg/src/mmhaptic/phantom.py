"""Synthetic torsos with known potential fields, probe trajectories and
simulated wrench measurements.

A phantom is an elliptic cylinder. Its ground-truth field is the Laplace
solution for its own boundary values, optionally plus a truncated Gaussian
stiffness bump inside the body, so the truth differs from the default model
both globally (boundary magnitude) and locally (the bump).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError
from .field import (
    DEFAULT_RESOLUTION,
    BoundarySpec,
    CylindricalGrid,
    LaplaceSystem,
    PotentialField,
    build_grid,
    laplace_field,
)
from .geometry import TWO_PI, BodyAxis, Pose, rotation_about
from .render import PointShell, render_step
from .scanlog import NOMINAL_RATE_HZ, ScanRecord
from .surface import SurfaceModel

BUMP_CUTOFF_WIDTHS = 3.0
DEFAULT_SIGMA_FORCE = 0.1
DEFAULT_SIGMA_TORQUE = 0.005


@dataclass(frozen=True)
class Bump:
    """Gaussian bump centred at cylindrical (r, θ, z), zero beyond 3 widths."""

    center: tuple[float, float, float]
    width: float
    amplitude: float

    def __post_init__(self):
        if not self.width > 0 or not np.isfinite(self.amplitude):
            raise ConfigurationError("bump width must be positive and amplitude finite")


@dataclass(frozen=True)
class PhantomSpec:
    semi_axes: tuple[float, float] = (0.15, 0.11)
    length: float = 0.25
    boundary: tuple[float, float] = (4.0, -1.0)
    bump: Bump | None = None
    num_angles: int = 180
    slice_pitch: float = 0.005

    def __post_init__(self):
        if min(self.semi_axes) <= 0 or not self.length > 0:
            raise ConfigurationError("phantom semi-axes and length must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        bump = d.pop("bump", None)
        if bump is not None:
            bump = Bump(tuple(bump["center"]), float(bump["width"]), float(bump["amplitude"]))
        for key in ("semi_axes", "boundary"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(bump=bump, **d)


def ellipse_radius(theta, a: float, b: float):
    theta = np.asarray(theta, dtype=float)
    return a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)


def phantom_axis() -> BodyAxis:
    return BodyAxis(np.zeros(3), np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))


def phantom_surface(spec: PhantomSpec) -> SurfaceModel:
    n_slices = max(1, int(round(spec.length / spec.slice_pitch)))
    slice_z = (np.arange(n_slices) + 0.5) * (spec.length / n_slices)
    angles = TWO_PI * np.arange(spec.num_angles) / spec.num_angles
    radii = np.tile(ellipse_radius(angles, *spec.semi_axes), (n_slices, 1))
    return SurfaceModel(phantom_axis(), slice_z, radii)


@dataclass
class Phantom:
    spec: PhantomSpec
    surface: SurfaceModel
    grid: CylindricalGrid
    truth: PotentialField
    laplace: PotentialField  # truth without the bump
    system: LaplaceSystem


def bump_values(bump: Bump, grid: CylindricalGrid) -> np.ndarray:
    c = grid.centers_cylindrical()
    xyz = np.column_stack([c[:, 0] * np.cos(c[:, 1]), c[:, 0] * np.sin(c[:, 1]), c[:, 2]])
    r, th, z = bump.center
    center = np.array([r * np.cos(th), r * np.sin(th), z])
    dist = np.linalg.norm(xyz - center, axis=1)
    out = bump.amplitude * np.exp(-0.5 * (dist / bump.width) ** 2)
    out[dist > BUMP_CUTOFF_WIDTHS * bump.width] = 0.0
    return out


def make_phantom(spec: PhantomSpec, resolution=DEFAULT_RESOLUTION) -> Phantom:
    surface = phantom_surface(spec)
    grid = build_grid(surface, resolution)
    system, lap = laplace_field(surface, grid, BoundarySpec(*spec.boundary))
    values = lap.values.copy()
    if spec.bump is not None:
        r, th, z = spec.bump.center
        if not (0.0 < z < spec.length and grid.r0 < r < float(surface.radius_at(th, z))):
            raise ConfigurationError(f"bump centre {spec.bump.center} is not inside the body")
        inside = values >= 0.0
        # the bump never flips the sign structure
        values[inside] = np.maximum(values[inside] + bump_values(spec.bump, grid)[inside], 0.0)
    return Phantom(spec, surface, grid, PotentialField(grid, values), lap, system)


DEFAULT_PHANTOMS = (
    PhantomSpec((0.12, 0.12), 0.25, (3.0, -1.0), Bump((0.105, 0.0, 0.11), 0.02, 0.5)),
    PhantomSpec((0.15, 0.11), 0.25, (4.0, -1.0), Bump((0.135, 0.0, 0.14), 0.025, 0.8)),
    PhantomSpec((0.16, 0.10), 0.25, (5.0, -1.0), Bump((0.14, 0.1, 0.12), 0.02, 1.0)),
)


@dataclass(frozen=True)
class TrajectoryParams:
    theta: float = 0.0  # contact angle about the body axis
    z: float = 0.125  # press location, or sweep start
    depth: float = 0.015  # maximum depth (press) or constant depth (sweep), metres
    clearance: float = 0.005  # press start height above the surface
    length: float = 0.1  # sweep travel along z
    duration: float = 4.0  # seconds
    rate: float = NOMINAL_RATE_HZ
    jitter_translation: float = 0.0005
    jitter_rotation: float = 0.005
    probe_half_height: float = 0.04  # centre of mass to tip face

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trajectory:
    kind: str
    times: np.ndarray
    poses: list
    nominal: list = field(repr=False)
    params: TrajectoryParams | None = None


def surface_frame(surface: SurfaceModel, theta: float, z: float):
    """Surface point and outward unit normal at (θ, z), in world coordinates."""
    h = 1e-5
    r = float(surface.radius_at(theta, z))
    dr = float(surface.radius_at(theta + h, z) - surface.radius_at(theta - h, z)) / (2 * h)
    c, s = np.cos(theta), np.sin(theta)
    tangent = np.array([dr * c - r * s, dr * s + r * c, 0.0])
    normal = np.array([tangent[1], -tangent[0], 0.0])
    normal /= np.linalg.norm(normal)
    F = surface.axis.frame
    point = surface.axis.origin + F.T @ np.array([r * c, r * s, z])
    return point, F.T @ normal


def probe_pose_at(surface: SurfaceModel, theta: float, z: float, depth: float, half_height: float) -> Pose:
    """Probe pressed ``depth`` metres past the surface along the outward normal.

    The probe's local +z points out of the body, so its tip face (local
    z = -half_height) is the contact face; local x runs along the body axis.
    """
    point, normal = surface_frame(surface, theta, z)
    ex = surface.axis.z_direction
    ey = np.cross(normal, ex)
    R = np.column_stack([ex, ey, normal])
    return Pose(R, point + (half_height - depth) * normal)


def make_trajectory(kind: str, params: TrajectoryParams, surface: SurfaceModel,
                    grid: CylindricalGrid | None = None, seed: int = 0) -> Trajectory:
    n = int(round(params.duration * params.rate))
    if n < 2:
        raise ConfigurationError("trajectory needs at least two samples")
    times = np.arange(n) / params.rate
    s = np.linspace(0.0, 1.0, n)
    if kind == "press":
        depth = -params.clearance + (params.depth + params.clearance) * (1.0 - np.abs(2.0 * s - 1.0))
        z = np.full(n, params.z)
    elif kind == "sweep":
        depth = np.full(n, params.depth)
        z = params.z + params.length * s
    else:
        raise ConfigurationError(f"unknown trajectory kind {kind!r}")
    if grid is not None:
        floor = float(surface.radius_at(params.theta, z).min()) - (grid.r0 + grid.dr)
        if depth.max() >= floor:
            raise ConfigurationError(f"depth {depth.max():.4f} m reaches the grid's inner boundary")
        if z.min() < grid.z0 or z.max() > grid.z0 + grid.nz * grid.dz:
            raise ConfigurationError("trajectory leaves the grid's z span")
    nominal = [probe_pose_at(surface, params.theta, zi, di, params.probe_half_height) for zi, di in zip(z, depth)]
    rng = np.random.default_rng(seed)
    poses = []
    for pose in nominal:
        dt = rng.normal(0.0, params.jitter_translation, 3) if params.jitter_translation > 0 else np.zeros(3)
        axis = rng.normal(size=3)
        angle = rng.normal(0.0, params.jitter_rotation) if params.jitter_rotation > 0 else 0.0
        R = rotation_about(axis, angle) @ pose.rotation
        poses.append(Pose(R, pose.translation + dt))
    return Trajectory(kind, times, poses, nominal, params)


@dataclass
class SyntheticScan:
    records: list
    provenance: dict


def simulate_measurements(shell: PointShell, trajectory: Trajectory, surface: SurfaceModel,
                          grid: CylindricalGrid, truth: PotentialField,
                          sigma_force: float = DEFAULT_SIGMA_FORCE, sigma_torque: float = DEFAULT_SIGMA_TORQUE,
                          seed: int = 0, provenance: dict | None = None) -> SyntheticScan:
    """Render every pose against the truth field and add Gaussian sensor noise."""
    rng = np.random.default_rng(seed)
    records = []
    for t, pose in zip(trajectory.times, trajectory.poses):
        res = render_step(shell, pose, grid, truth, surface)
        f = res.force + rng.normal(0.0, sigma_force, 3) if sigma_force > 0 else res.force.copy()
        tau = res.torque + rng.normal(0.0, sigma_torque, 3) if sigma_torque > 0 else res.torque.copy()
        records.append(ScanRecord(float(t), pose, f, tau))
    prov = {
        "trajectory": trajectory.kind,
        "params": trajectory.params.to_dict() if trajectory.params else None,
        "sigma_force": sigma_force,
        "sigma_torque": sigma_torque,
        "seed": seed,
    }
    prov.update(provenance or {})
    return SyntheticScan(records, prov)
