"""Voxmap-pointshell rendering of probe force and torque.

The probe is a cloud of surface points with inward normals. At each pose
every point is mapped to its voxel with one index computation; points whose
radius is below the patient surface radius at their (θ, z) are kept, and
each occupied voxel contributes its averaged normal (force) and averaged
moment (torque) scaled by the voxel potential. Because the averages do not
depend on the field, each render also yields the sparse rows N_t, W_t with
f_t = N_t p and τ_t = W_t p.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, CoverageError, DimensionError
from .field import OUTSIDE, CylindricalGrid, PotentialField, voxel_of
from .geometry import Pose, to_cylindrical
from .surface import SurfaceModel


@dataclass
class PointShell:
    """Probe pointshell in its local frame, centre of mass at the origin."""

    points: np.ndarray
    normals: np.ndarray
    moments: np.ndarray = field(init=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if self.points.shape != self.normals.shape:
            raise DimensionError("points and normals must have the same shape")
        if np.any(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0) > 1e-9):
            raise ConfigurationError("pointshell normals must be unit vectors")
        self.moments = np.cross(self.points, self.normals)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class ProbeSpec:
    """Parametric probe geometry.

    ``shape`` is ``"sphere"`` (radius = half_extents[0]), ``"box"`` or
    ``"rounded_box"`` (box with edges and corners rounded by ``rounding``).
    ``num_points`` is a target; box sampling rounds it to whole face grids.
    """

    shape: str = "rounded_box"
    half_extents: tuple[float, float, float] = (0.03, 0.01, 0.04)
    rounding: float = 0.006
    num_points: int = 2000


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    golden = np.pi * (1.0 + 5.0 ** 0.5)
    return np.column_stack([np.cos(golden * i) * np.sin(phi), np.sin(golden * i) * np.sin(phi), np.cos(phi)])


def _box_surface_grid(half, n_target: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centred grids on the six faces, roughly uniform density."""
    a = np.asarray(half, dtype=float)
    area = 8.0 * (a[0] * a[1] + a[1] * a[2] + a[0] * a[2])
    h = np.sqrt(area / n_target)
    pts, nrm = [], []
    for axis in range(3):
        u, v = [k for k in range(3) if k != axis]
        nu = max(1, int(round(2 * a[u] / h)))
        nv = max(1, int(round(2 * a[v] / h)))
        cu = -a[u] + (np.arange(nu) + 0.5) * (2 * a[u] / nu)
        cv = -a[v] + (np.arange(nv) + 0.5) * (2 * a[v] / nv)
        U, Vv = np.meshgrid(cu, cv, indexing="ij")
        for sign in (-1.0, 1.0):
            p = np.zeros((nu * nv, 3))
            p[:, u] = U.ravel()
            p[:, v] = Vv.ravel()
            p[:, axis] = sign * a[axis]
            n = np.zeros_like(p)
            n[:, axis] = sign
            pts.append(p)
            nrm.append(n)
    return np.vstack(pts), np.vstack(nrm)


def build_probe_pointshell(spec: ProbeSpec = ProbeSpec()) -> PointShell:
    if spec.num_points < 4:
        raise ConfigurationError("a pointshell needs at least 4 points")
    half = np.asarray(spec.half_extents, dtype=float)
    if spec.shape == "sphere":
        if not half[0] > 0:
            raise ConfigurationError("sphere radius must be positive")
        d = _fibonacci_sphere(spec.num_points)
        return PointShell(half[0] * d, -d)
    if np.any(half <= 0):
        raise ConfigurationError("box half extents must be positive")
    if spec.shape == "box":
        p, n = _box_surface_grid(half, spec.num_points)
        return PointShell(p, -n)
    if spec.shape == "rounded_box":
        rho = float(spec.rounding)
        if not 0 < rho < half.min():
            raise ConfigurationError("rounding must be positive and below the smallest half extent")
        p, _ = _box_surface_grid(half, spec.num_points)
        core = half - rho
        q = np.clip(p, -core, core)
        out = p - q
        out /= np.linalg.norm(out, axis=1, keepdims=True)
        return PointShell(q + rho * out, -out)
    raise ConfigurationError(f"unknown probe shape {spec.shape!r}")


@dataclass
class QueryCounter:
    """Counts voxel index computations made by the renderer."""

    voxel_queries: int = 0
    renders: int = 0


@dataclass
class ContactRows:
    voxels: np.ndarray  # occupied flat voxel indices, ascending
    counts: np.ndarray  # kept points per occupied voxel
    mean_normals: np.ndarray  # (K, 3)
    mean_moments: np.ndarray  # (K, 3)
    V: int

    def N(self) -> sp.csr_matrix:
        return _rows(self.mean_normals, self.voxels, self.V)

    def W(self) -> sp.csr_matrix:
        return _rows(self.mean_moments, self.voxels, self.V)


def _rows(vectors: np.ndarray, voxels: np.ndarray, V: int) -> sp.csr_matrix:
    K = len(voxels)
    data = vectors.T.ravel()
    cols = np.tile(voxels, 3)
    indptr = np.arange(4) * K
    return sp.csr_matrix((data, cols, indptr), shape=(3, V))


def contact_rows(shell: PointShell, pose: Pose, grid: CylindricalGrid, surface: SurfaceModel,
                 counter: QueryCounter | None = None) -> ContactRows:
    """Gate, voxelise and average the pointshell at one pose."""
    pts = pose.apply(shell.points)
    cyl = to_cylindrical(pts, surface.axis)
    vox = voxel_of(cyl, grid)
    if counter is not None:
        counter.voxel_queries += len(vox)
        counter.renders += 1
    inside = cyl[:, 0] < surface.radius_at(cyl[:, 1], cyl[:, 2])
    if np.any(inside & (vox == OUTSIDE)):
        m = int(np.flatnonzero(inside & (vox == OUTSIDE))[0])
        raise CoverageError(f"probe point {m} at (r, θ, z)={tuple(np.round(cyl[m], 5))} penetrates the "
                            "surface but lies outside the voxel grid")
    vox = vox[inside]
    if len(vox) == 0:
        empty = np.zeros((0, 3))
        return ContactRows(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), empty, empty, grid.size)
    voxels, inverse, counts = np.unique(vox, return_inverse=True, return_counts=True)
    normals = pose.rotate(shell.normals[inside])
    moments = pose.rotate(shell.moments[inside])
    n_sum = np.zeros((len(voxels), 3))
    w_sum = np.zeros((len(voxels), 3))
    np.add.at(n_sum, inverse, normals)
    np.add.at(w_sum, inverse, moments)
    return ContactRows(voxels, counts, n_sum / counts[:, None], w_sum / counts[:, None], grid.size)


@dataclass
class RenderResult:
    force: np.ndarray
    torque: np.ndarray
    N: sp.csr_matrix
    W: sp.csr_matrix
    occupied: list  # [(voxel index, point count), ...]


def render_step(shell: PointShell, pose: Pose, grid: CylindricalGrid, field_: PotentialField,
                surface: SurfaceModel, counter: QueryCounter | None = None) -> RenderResult:
    rows = contact_rows(shell, pose, grid, surface, counter)
    N = rows.N()
    W = rows.W()
    return RenderResult(
        force=N @ field_.values,
        torque=W @ field_.values,
        N=N,
        W=W,
        occupied=list(zip(rows.voxels.tolist(), rows.counts.tolist())),
    )


class MeasurementBatch:
    """Row-stacked observation matrices and measured wrenches over T timesteps."""

    def __init__(self, V: int):
        self.V = int(V)
        self._N: list[sp.csr_matrix] = []
        self._W: list[sp.csr_matrix] = []
        self._f: list[np.ndarray] = []
        self._tau: list[np.ndarray] = []

    @property
    def T(self) -> int:
        return len(self._f)

    def _stack(self, blocks) -> sp.csr_matrix:
        if not blocks:
            return sp.csr_matrix((0, self.V))
        return sp.vstack(blocks, format="csr")

    @property
    def N(self) -> sp.csr_matrix:
        return self._stack(self._N)

    @property
    def W(self) -> sp.csr_matrix:
        return self._stack(self._W)

    @property
    def f(self) -> np.ndarray:
        return np.concatenate(self._f) if self._f else np.zeros(0)

    @property
    def tau(self) -> np.ndarray:
        return np.concatenate(self._tau) if self._tau else np.zeros(0)

    def timestep(self, t: int):
        """(N_t, W_t, f_t, τ_t) of one appended sample."""
        return self._N[t], self._W[t], self._f[t], self._tau[t]

    def append(self, N_t, W_t, force, torque) -> "MeasurementBatch":
        N_t = sp.csr_matrix(N_t)
        W_t = sp.csr_matrix(W_t)
        if N_t.shape != (3, self.V) or W_t.shape != (3, self.V):
            raise DimensionError(f"rows must be 3x{self.V}, got {N_t.shape} and {W_t.shape}")
        f = np.asarray(force, dtype=float).reshape(3)
        tau = np.asarray(torque, dtype=float).reshape(3)
        self._N.append(N_t)
        self._W.append(W_t)
        self._f.append(f)
        self._tau.append(tau)
        return self

    def subset(self, indices) -> "MeasurementBatch":
        out = MeasurementBatch(self.V)
        for t in indices:
            out.append(*self.timestep(t))
        return out

    def contact_count(self) -> int:
        return sum(1 for N_t in self._N if N_t.nnz)


def append_measurement(batch: MeasurementBatch, result: RenderResult, measured_force,
                       measured_torque) -> MeasurementBatch:
    """Add one sample; the stored wrench is the measured one, not ``result.force``."""
    return batch.append(result.N, result.W, measured_force, measured_torque)


def batch_from_records(records, shell: PointShell, grid: CylindricalGrid, surface: SurfaceModel,
                       counter: QueryCounter | None = None) -> MeasurementBatch:
    """Replay logged poses into observation rows paired with the logged wrenches."""
    batch = MeasurementBatch(grid.size)
    for i, rec in enumerate(records):
        try:
            rows = contact_rows(shell, rec.pose, grid, surface, counter)
        except CoverageError as exc:
            exc.sample_index = i
            raise
        batch.append(rows.N(), rows.W(), rec.force, rec.torque)
    return batch
