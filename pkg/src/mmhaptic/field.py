"""Cylindrical voxel grid and the finite-difference Laplace model.

Voxels are cells of an annular cylinder around the body axis; values live at
cell centres. The radial inner ring, the radial outer ring, the voxel nearest
the patient surface in every (θ, z) column and both z caps are Dirichlet
voxels; everything else satisfies the 7-point central-difference Laplacian
in cylindrical coordinates with periodic coupling in θ.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, SolverError
from .geometry import TWO_PI
from .surface import SurfaceModel

OUTSIDE = -1
INNER_RADIUS_FRACTION = 0.2
RADIAL_MARGIN_VOXELS = 3
DEFAULT_RESOLUTION = (0.005, TWO_PI / 90, 0.005)


@dataclass(frozen=True)
class CylindricalGrid:
    r0: float
    dr: float
    nr: int
    dtheta: float
    ntheta: int
    z0: float
    dz: float
    nz: int

    def __post_init__(self):
        if not self.r0 > 0:
            raise ConfigurationError("inner radius r0 must be positive")
        if min(self.dr, self.dtheta, self.dz) <= 0:
            raise ConfigurationError("grid steps must be positive")
        if min(self.nr, self.ntheta, self.nz) < 3:
            raise ConfigurationError("grid needs at least 3 voxels along each direction")
        if abs(self.ntheta * self.dtheta - TWO_PI) > 1e-9:
            raise ConfigurationError("ntheta * dtheta must equal 2π")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.nr, self.ntheta, self.nz

    @property
    def size(self) -> int:
        return self.nr * self.ntheta * self.nz

    @property
    def r_centers(self) -> np.ndarray:
        return self.r0 + (np.arange(self.nr) + 0.5) * self.dr

    @property
    def theta_centers(self) -> np.ndarray:
        return (np.arange(self.ntheta) + 0.5) * self.dtheta

    @property
    def z_centers(self) -> np.ndarray:
        return self.z0 + (np.arange(self.nz) + 0.5) * self.dz

    @property
    def r_outer(self) -> float:
        return self.r0 + self.nr * self.dr

    def flat(self, ir, itheta, iz):
        return np.asarray(ir) + self.nr * (np.asarray(itheta) + self.ntheta * np.asarray(iz))

    def unflat(self, v):
        v = np.asarray(v)
        return v % self.nr, (v // self.nr) % self.ntheta, v // (self.nr * self.ntheta)

    def centers_cylindrical(self) -> np.ndarray:
        """(V, 3) array of voxel-centre (r, θ, z) in flat-index order."""
        R, T, Z = np.meshgrid(self.r_centers, self.theta_centers, self.z_centers, indexing="ij")
        return np.column_stack([R.ravel("F"), T.ravel("F"), Z.ravel("F")])

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("r0", "dr", "nr", "dtheta", "ntheta", "z0", "dz", "nz")}

    @classmethod
    def from_dict(cls, d: dict) -> "CylindricalGrid":
        return cls(float(d["r0"]), float(d["dr"]), int(d["nr"]), float(d["dtheta"]), int(d["ntheta"]),
                   float(d["z0"]), float(d["dz"]), int(d["nz"]))


def build_grid(surface: SurfaceModel, resolution=DEFAULT_RESOLUTION,
               margin_voxels: int = RADIAL_MARGIN_VOXELS) -> CylindricalGrid:
    dr, dtheta, dz = (float(x) for x in resolution)
    if min(dr, dtheta, dz) <= 0:
        raise ConfigurationError("resolution must be positive")
    r_min = float(surface.radii.min())
    r_max = float(surface.radii.max())
    r0 = INNER_RADIUS_FRACTION * r_min
    if r_min - r0 < 2.0 * dr:
        raise ConfigurationError(f"dr={dr} too coarse for a surface of minimum radius {r_min:.4f} m")
    nr = int(np.ceil((r_max - r0) / dr)) + margin_voxels
    ntheta = max(3, int(round(TWO_PI / dtheta)))
    if len(surface.slice_z) > 1:
        pitch = float(np.mean(np.diff(surface.slice_z)))
    else:
        pitch = dz
    z_lo = surface.slice_z[0] - 0.5 * pitch
    z_hi = surface.slice_z[-1] + 0.5 * pitch
    nz = int(np.ceil((z_hi - z_lo) / dz - 1e-9))
    if nz < 3:
        raise ConfigurationError(f"dz={dz} too coarse for a surface spanning {z_hi - z_lo:.4f} m")
    z0 = 0.5 * (z_lo + z_hi) - 0.5 * nz * dz
    return CylindricalGrid(r0, dr, nr, TWO_PI / ntheta, ntheta, z0, dz, nz)


def voxel_of(cyl, grid: CylindricalGrid) -> np.ndarray:
    """Flat voxel index of each cylindrical point, ``OUTSIDE`` (-1) off-grid.

    Accepts one (r, θ, z) triple or an (n, 3) array.
    """
    c = np.asarray(cyl, dtype=float)
    single = c.ndim == 1
    c = c.reshape(-1, 3)
    ir = np.floor((c[:, 0] - grid.r0) / grid.dr).astype(np.int64)
    it = np.floor(np.mod(c[:, 1], TWO_PI) / grid.dtheta).astype(np.int64) % grid.ntheta
    iz = np.floor((c[:, 2] - grid.z0) / grid.dz).astype(np.int64)
    ok = (ir >= 0) & (ir < grid.nr) & (iz >= 0) & (iz < grid.nz)
    v = np.where(ok, grid.flat(ir, it, iz), OUTSIDE)
    return int(v[0]) if single else v


@dataclass(frozen=True)
class BoundarySpec:
    inner_value: float = 1.0
    outer_value: float = -1.0
    check: bool = field(default=True, compare=False)

    surface_value = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.inner_value) and np.isfinite(self.outer_value)):
            raise ConfigurationError("boundary values must be finite")
        if self.check and not self.inner_value * self.outer_value < 0:
            raise ConfigurationError("inner and outer boundary values must have opposite signs")

    def scaled(self, factor: float) -> "BoundarySpec":
        return BoundarySpec(self.inner_value * factor, self.outer_value * factor, self.check)


def surface_radial_index(grid: CylindricalGrid, radius) -> np.ndarray:
    """Nearest radial centre index; exact ties go to the smaller radius."""
    x = (np.asarray(radius, dtype=float) - grid.r0) / grid.dr - 0.5
    return np.ceil(x - 0.5).astype(np.int64)


def surface_index_grid(surface: SurfaceModel, grid: CylindricalGrid) -> np.ndarray:
    """(ntheta, nz) radial index of the surface voxel in every column."""
    T, Z = np.meshgrid(grid.theta_centers, grid.z_centers, indexing="ij")
    radius = surface.radius_at(T, Z)
    idx = surface_radial_index(grid, radius)
    if idx.min() < 1 or idx.max() > grid.nr - 2:
        raise ConfigurationError("surface radius falls outside the grid's interior radial span")
    return idx


def surface_boundary_voxels(surface: SurfaceModel, grid: CylindricalGrid) -> np.ndarray:
    """Sorted flat indices of the surface voxels, exactly one per (θ, z) column."""
    idx = surface_index_grid(surface, grid)
    it, iz = np.meshgrid(np.arange(grid.ntheta), np.arange(grid.nz), indexing="ij")
    return np.sort(grid.flat(idx, it, iz).ravel())


def _radial_theta_stencil(grid: CylindricalGrid, r_c: np.ndarray):
    dr2 = grid.dr ** 2
    c_rp = 1.0 / dr2 + 1.0 / (2.0 * grid.dr * r_c)
    c_rm = 1.0 / dr2 - 1.0 / (2.0 * grid.dr * r_c)
    c_t = 1.0 / (r_c ** 2 * grid.dtheta ** 2)
    return c_rp, c_rm, c_t


def solve_polar_slice(grid: CylindricalGrid, boundary: BoundarySpec, surface_index=None) -> np.ndarray:
    """2D polar Laplace solution on one (r, θ) slice, flat index ir + nr·iθ.

    ``surface_index`` gives, per angular bin, the radial index pinned to zero;
    ``None`` leaves only the inner and outer rings as conditions.
    """
    nr, nt = grid.nr, grid.ntheta
    n = nr * nt
    ir, it = np.meshgrid(np.arange(nr), np.arange(nt), indexing="ij")
    ir = ir.ravel("F")
    it = it.ravel("F")
    v = ir + nr * it
    values = np.zeros(n)
    fixed = np.zeros(n, dtype=bool)
    fixed[ir == 0] = True
    values[ir == 0] = boundary.inner_value
    fixed[ir == nr - 1] = True
    values[ir == nr - 1] = boundary.outer_value
    if surface_index is not None:
        s = np.asarray(surface_index, dtype=np.int64).reshape(nt)
        sv = s + nr * np.arange(nt)
        fixed[sv] = True
        values[sv] = boundary.surface_value
    free = ~fixed
    rows, cols, data = [v[fixed]], [v[fixed]], [np.ones(fixed.sum())]
    fr, ft, fv = ir[free], it[free], v[free]
    r_c = grid.r_centers[fr]
    c_rp, c_rm, c_t = _radial_theta_stencil(grid, r_c)
    diag = -2.0 / grid.dr ** 2 - 2.0 * c_t
    for nb, coef in (
        (fv + 1, c_rp),
        (fv - 1, c_rm),
        (fr + nr * ((ft + 1) % nt), c_t),
        (fr + nr * ((ft - 1) % nt), c_t),
        (fv, diag),
    ):
        rows.append(fv)
        cols.append(nb)
        data.append(coef)
    A = sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    b = np.where(fixed, values, 0.0)
    try:
        p = spla.spsolve(A, b)
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise SolverError(f"polar slice system is singular: {exc}") from exc
    if not np.all(np.isfinite(p)):
        raise SolverError("polar slice solve produced non-finite values")
    return p


@dataclass
class LaplaceSystem:
    L: sp.csr_matrix
    b: np.ndarray
    dirichlet: np.ndarray  # bool mask over voxels
    grid: CylindricalGrid
    boundary: BoundarySpec
    surface_index: np.ndarray | None = None  # (ntheta, nz) or None


def assemble_laplace(grid: CylindricalGrid, surface: SurfaceModel | None,
                     boundary: BoundarySpec = BoundarySpec()) -> LaplaceSystem:
    """Assemble L p = b. ``surface=None`` omits the zero-valued surface rows."""
    nr, nt, nz = grid.shape
    V = grid.size
    v = np.arange(V)
    ir, it, iz = grid.unflat(v)
    values = np.zeros(V)
    fixed = np.zeros(V, dtype=bool)

    sidx = None if surface is None else surface_index_grid(surface, grid)
    for cap in (0, nz - 1):
        cap_field = solve_polar_slice(grid, boundary, None if sidx is None else sidx[:, cap])
        sl = slice(cap * nr * nt, (cap + 1) * nr * nt)
        fixed[sl] = True
        values[sl] = cap_field
    # written after the caps so ring and surface values are exact there too
    if sidx is not None:
        sv = grid.flat(sidx, np.arange(nt)[:, None], np.arange(nz)[None, :]).ravel()
        fixed[sv] = True
        values[sv] = boundary.surface_value
    fixed[ir == 0] = True
    values[ir == 0] = boundary.inner_value
    fixed[ir == nr - 1] = True
    values[ir == nr - 1] = boundary.outer_value

    free = ~fixed
    fv, fr, ft, fz = v[free], ir[free], it[free], iz[free]
    r_c = grid.r_centers[fr]
    c_rp, c_rm, c_t = _radial_theta_stencil(grid, r_c)
    c_z = np.full(len(fv), 1.0 / grid.dz ** 2)
    diag = -2.0 / grid.dr ** 2 - 2.0 * c_t - 2.0 * c_z
    plane = nr * nt
    rows, cols, data = [v[fixed]], [v[fixed]], [np.ones(fixed.sum())]
    for nb, coef in (
        (fv + 1, c_rp),
        (fv - 1, c_rm),
        (fr + nr * ((ft + 1) % nt) + plane * fz, c_t),
        (fr + nr * ((ft - 1) % nt) + plane * fz, c_t),
        (fv + plane, c_z),
        (fv - plane, c_z),
        (fv, diag),
    ):
        rows.append(fv)
        cols.append(nb)
        data.append(coef)
    L = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(V, V))
    b = np.where(fixed, values, 0.0)
    return LaplaceSystem(L, b, fixed, grid, boundary, sidx)


@dataclass
class PotentialField:
    grid: CylindricalGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.values) != self.grid.size:
            raise ConfigurationError(f"field has {len(self.values)} values for {self.grid.size} voxels")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("field contains non-finite values")

    def as_array(self) -> np.ndarray:
        """Values reshaped to (nr, ntheta, nz)."""
        return self.values.reshape(self.grid.shape, order="F")

    def scaled(self, alpha: float) -> "PotentialField":
        return PotentialField(self.grid, alpha * self.values)


def solve_sparse(A, b, tol: float = 1e-8, max_refine: int = 3, what: str = "system") -> np.ndarray:
    """Direct sparse LU solve with a relative ∞-norm residual check."""
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverError(f"{what} is singular: {exc}") from exc
    x = lu.solve(b)
    scale = max(np.max(np.abs(b)), 1e-300)
    res = np.max(np.abs(A @ x - b)) / scale
    for _ in range(max_refine):
        if res <= tol:
            break
        x = x + lu.solve(b - A @ x)
        res = np.max(np.abs(A @ x - b)) / scale
    if not (res <= tol and np.all(np.isfinite(x))):
        raise SolverError(f"{what} did not converge: relative residual {res:.3e}", residual=res)
    return x


class LaplaceOperator:
    """Applies L⁻¹ and L⁻ᵀ for an assembled system.

    Multiplying each free (non-Dirichlet) row by its centre radius turns the
    free-free block into a symmetric negative-definite matrix, so with
    A = -diag(r) L_ff both solves reduce to one SPD solve with A. Small
    systems are factorised once; large ones use conjugate gradients.
    """

    DIRECT_LIMIT = 60_000

    def __init__(self, system: LaplaceSystem, method: str = "auto", cg_tol: float = 1e-13,
                 max_iter: int = 20_000):
        self.system = system
        L = sp.csr_matrix(system.L)
        self.free = np.flatnonzero(~system.dirichlet)
        self.fixed = np.flatnonzero(system.dirichlet)
        r = system.grid.centers_cylindrical()[:, 0]
        self.radius = r[self.free]
        L_free = L[self.free]
        self.L_ff = L_free[:, self.free].tocsr()
        self.L_fd = L_free[:, self.fixed].tocsr()
        self.A = (-sp.diags(self.radius) @ self.L_ff).tocsr()
        self.A = (0.5 * (self.A + self.A.T)).tocsr()
        if method == "auto":
            method = "direct" if len(self.free) <= self.DIRECT_LIMIT else "cg"
        self.method = method
        self.cg_tol = cg_tol
        self.max_iter = max_iter
        self._lu = None
        self._inv_diag = 1.0 / self.A.diagonal() if len(self.free) else None
        if method == "direct" and len(self.free):
            try:
                self._lu = spla.splu(self.A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                     options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise SolverError(f"free-voxel Laplacian is singular: {exc}") from exc
            pivots = self._lu.U.diagonal()
            if not np.all(pivots > 0):
                raise SolverError(f"free-voxel Laplacian is not definite (min pivot {pivots.min():.3e})")

    def _solve_A(self, rhs: np.ndarray) -> np.ndarray:
        if len(rhs) == 0:
            return rhs.copy()
        if self._lu is not None:
            return self._lu.solve(rhs)
        M = spla.LinearOperator(self.A.shape, matvec=lambda x: self._inv_diag * x)
        x, info = spla.cg(self.A, rhs, rtol=self.cg_tol, atol=0.0, maxiter=self.max_iter, M=M)
        if info != 0:
            res = np.linalg.norm(self.A @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
            raise SolverError(f"CG did not converge in {self.max_iter} iterations (residual {res:.3e})",
                              residual=res)
        return x

    def solve(self, y: np.ndarray) -> np.ndarray:
        """x with L x = y."""
        y = np.asarray(y, dtype=float)
        x = np.empty_like(y)
        x[self.fixed] = y[self.fixed]
        rhs = self.radius * (y[self.free] - self.L_fd @ y[self.fixed])
        x[self.free] = -self._solve_A(rhs)
        return x

    def solve_transpose(self, y: np.ndarray) -> np.ndarray:
        """x with Lᵀ x = y."""
        y = np.asarray(y, dtype=float)
        x = np.empty_like(y)
        x_f = -self.radius * self._solve_A(y[self.free])
        x[self.free] = x_f
        x[self.fixed] = y[self.fixed] - self.L_fd.T @ x_f
        return x

    def solve_normal(self, y: np.ndarray) -> np.ndarray:
        """(LᵀL)⁻¹ y."""
        return self.solve(self.solve_transpose(y))


def solve_laplace(system: LaplaceSystem, tol: float = 1e-8, operator: LaplaceOperator | None = None,
                  max_refine: int = 3) -> PotentialField:
    """Solve L p = b; the relative ∞-norm residual must reach ``tol``."""
    op = operator or LaplaceOperator(system)
    L, b = system.L, system.b
    p = op.solve(b)
    scale = max(np.max(np.abs(b)), 1e-300)
    res = np.max(np.abs(L @ p - b)) / scale
    for _ in range(max_refine):
        if res <= tol:
            break
        p = p + op.solve(b - L @ p)
        res = np.max(np.abs(L @ p - b)) / scale
    if not (res <= tol and np.all(np.isfinite(p))):
        raise SolverError(f"Laplace solve stalled at relative residual {res:.3e}", residual=res)
    return PotentialField(system.grid, p)


def is_inside(field_: PotentialField, voxel) -> bool:
    """Collision test: a voxel belongs to the body when its potential is positive."""
    if isinstance(voxel, tuple):
        voxel = field_.grid.flat(*voxel)
    return bool(field_.values[int(voxel)] > 0.0)


def laplace_field(surface: SurfaceModel, grid: CylindricalGrid,
                  boundary: BoundarySpec = BoundarySpec()) -> tuple[LaplaceSystem, PotentialField]:
    system = assemble_laplace(grid, surface, boundary)
    return system, solve_laplace(system)
