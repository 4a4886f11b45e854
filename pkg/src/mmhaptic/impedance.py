"""Measurement-augmented potential field.

The field minimises ‖Lp − b‖² + λ‖Np − f‖² + λ‖Wp − τ‖², i.e. it solves
Q p = d with Q = LᵀL + λNᵀN + λWᵀW and d = Lᵀb + λNᵀf + λWᵀτ. Q is positive
definite whenever L is invertible, which the Dirichlet rows guarantee.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DimensionError, ModelError, SolverError
from .field import LaplaceOperator, LaplaceSystem, PotentialField, solve_laplace
from .metrics import mean_magnitude_error
from .render import MeasurementBatch

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1e-4
LAMBDA_GRID = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


@dataclass
class AugmentedSystem:
    Q: sp.csr_matrix
    d: np.ndarray
    lam: float


def _measurement_blocks(batch: MeasurementBatch, use_torque: bool):
    if use_torque:
        return batch.N, batch.W, batch.f, batch.tau
    empty = sp.csr_matrix((0, batch.V))
    return batch.N, empty, batch.f, np.zeros(0)


def assemble_augmented(L, b, batch: MeasurementBatch, lam: float, use_torque: bool = True) -> AugmentedSystem:
    if lam < 0:
        raise ConfigurationError("λ must be non-negative")
    L = sp.csr_matrix(L)
    V = L.shape[1]
    if L.shape[0] != V or len(b) != V or batch.V != V:
        raise DimensionError(f"L is {L.shape}, b has {len(b)} entries, batch has {batch.V} columns")
    N, W, f, tau = _measurement_blocks(batch, use_torque)
    Q = (L.T @ L).tocsr()
    d = L.T @ np.asarray(b, dtype=float)
    if lam > 0 and batch.T > 0:
        Q = (Q + lam * (N.T @ N + W.T @ W)).tocsr()
        d = d + lam * (N.T @ f + W.T @ tau)
    return AugmentedSystem(Q, d, float(lam))


def factorize_spd(Q):
    """LDLᵀ-style factorisation of a symmetric matrix; raises unless definite.

    Uses diagonal pivoting under a symmetric fill-reducing permutation, so
    the U diagonal holds the pivots of the symmetric elimination.
    """
    try:
        lu = spla.splu(sp.csc_matrix(Q), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True, Equil=False))
    except RuntimeError as exc:
        raise ModelError(f"Q is singular: {exc}", smallest_pivot=0.0) from exc
    pivots = lu.U.diagonal()
    smallest = float(pivots.min())
    if not smallest > 0.0:
        raise ModelError(f"Q is not positive definite (smallest pivot {smallest:.3e})", smallest_pivot=smallest)
    return lu


def relative_residual(Q, p, d) -> float:
    return float(np.linalg.norm(Q @ p - d) / max(np.linalg.norm(d), 1e-300))


def backward_error(Q, p, d) -> float:
    """Normwise backward error ‖Qp − d‖ / ‖|Q||p| + |d|‖."""
    scale = np.linalg.norm(abs(Q) @ np.abs(p) + np.abs(d))
    return float(np.linalg.norm(Q @ p - d) / max(scale, 1e-300))


def solve_augmented(system: AugmentedSystem, tol: float = 1e-8) -> np.ndarray:
    """Direct solve of Q p = d after the positive-definite check.

    Accepts the solution when ‖Qp − d‖/‖d‖ ≤ tol, or, on grids where forming
    LᵀL puts that bound below double-precision round-off, when the normwise
    backward error is ≤ tol.
    """
    lu = factorize_spd(system.Q)
    p = lu.solve(system.d)
    for _ in range(3):
        if relative_residual(system.Q, p, system.d) <= tol:
            break
        p = p + lu.solve(system.d - system.Q @ p)
    if relative_residual(system.Q, p, system.d) > tol:
        err = backward_error(system.Q, p, system.d)
        if err > tol:
            raise SolverError(f"augmented solve backward error {err:.3e} above {tol:.1e}", residual=err)
    return p


class NormalResidual:
    """Residual of the augmented normal equations evaluated in factored form.

    Lᵀ(Lp − b) + λNᵀ(Np − f) + λWᵀ(Wp − τ) equals Qp − d but never forms
    LᵀL p, which would cancel catastrophically for fine grids.
    """

    def __init__(self, L, b, lam: float):
        self.L = sp.csr_matrix(L)
        self.Lt = self.L.T.tocsr()
        self.b = np.asarray(b, dtype=float)
        self.lam = float(lam)
        self.blocks: list[tuple[sp.csr_matrix, np.ndarray]] = []

    def add(self, R, g):
        if self.lam > 0 and R.shape[0] > 0:
            self.blocks.append((sp.csr_matrix(R), np.asarray(g, dtype=float)))

    def __call__(self, p) -> np.ndarray:
        r = self.Lt @ (self.L @ p - self.b)
        for R, g in self.blocks:
            r += self.lam * (R.T @ (R @ p - g))
        return r

    def matvec(self, x) -> np.ndarray:
        y = self.Lt @ (self.L @ x)
        for R, _ in self.blocks:
            y += self.lam * (R.T @ (R @ x))
        return y

    def scale(self, p) -> np.ndarray:
        """Magnitude of the terms summed in the residual (round-off yardstick)."""
        ap = np.abs(p)
        s = abs(self.Lt) @ (abs(self.L) @ ap + np.abs(self.b))
        for R, g in self.blocks:
            s += self.lam * (abs(R).T @ (abs(R) @ ap + np.abs(g)))
        return s

    def backward_error(self, p) -> float:
        return float(np.linalg.norm(self(p)) / max(np.linalg.norm(self.scale(p)), 1e-300))


def _normal_residual(system: LaplaceSystem, batch: MeasurementBatch, lam: float, use_torque: bool):
    nr = NormalResidual(system.L, system.b, lam)
    N, W, f, tau = _measurement_blocks(batch, use_torque)
    nr.add(N, f)
    nr.add(W, tau)
    return nr


def fit_field(system: LaplaceSystem, batch: MeasurementBatch, lam: float = DEFAULT_LAMBDA,
              operator: LaplaceOperator | None = None, tol: float = 1e-8, use_torque: bool = True,
              max_iter: int = 5000) -> PotentialField:
    """Augmented field for large grids without factorising Q.

    Substituting q = Lp turns the objective into ‖q − b‖² + λ‖U L⁻¹ q − g‖²,
    whose normal matrix I + λ L⁻ᵀUᵀU L⁻¹ is the identity plus a low-rank
    positive term. Conjugate gradients on it need only L and Lᵀ solves and
    never form LᵀL, whose products lose most digits on fine grids. The
    iteration starts from q = b, the plain Laplace solution.
    """
    if lam < 0:
        raise ConfigurationError("λ must be non-negative")
    if batch.V != system.L.shape[1]:
        raise DimensionError(f"batch has {batch.V} columns, L has {system.L.shape[1]}")
    op = operator or LaplaceOperator(system)
    p0 = solve_laplace(system, operator=op).values
    N, W, f, tau = _measurement_blocks(batch, use_torque)
    if lam == 0 or N.nnz + W.nnz == 0:
        return PotentialField(system.grid, p0)
    NT, WT = N.T.tocsr(), W.T.tocsr()
    b = system.b
    V = len(b)

    def data_normal(p):
        return NT @ (N @ p) + WT @ (W @ p)

    def matvec(q):
        return q + lam * op.solve_transpose(data_normal(op.solve(q)))

    # residual at q = b written without cancelling the Laplace part
    r0 = lam * op.solve_transpose(NT @ (f - N @ p0) + WT @ (tau - W @ p0))
    rhs_norm = np.linalg.norm(b + lam * op.solve_transpose(NT @ f + WT @ tau))
    if np.linalg.norm(r0) <= tol * rhs_norm:
        return PotentialField(system.grid, p0)
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    Aop = spla.LinearOperator((V, V), matvec=matvec)
    dq, info = spla.cg(Aop, r0, rtol=1e-2 * tol * rhs_norm / np.linalg.norm(r0), atol=0.0,
                       maxiter=max_iter, callback=count)
    res = float(np.linalg.norm(r0 - matvec(dq)) / rhs_norm)
    log.debug("augmented CG: %d iterations, relative residual %.2e", iterations, res)
    if res > tol:
        raise SolverError(f"augmented CG stopped after {iterations} iterations at residual {res:.3e}",
                          residual=res)
    return PotentialField(system.grid, p0 + op.solve(dq))


class SolverState:
    """Augmented solution kept current under appended measurements.

    Each timestep adds λUUᵀ to Q with U = [N_tᵀ W_tᵀ] (zero rows dropped),
    a rank ≤ 6 change handled with the matrix inversion lemma: the inverse
    action of Q is the base inverse minus a stack of low-rank corrections.
    """

    def __init__(self, base_solve, residual: NormalResidual, p, use_torque: bool = True, tol: float = 1e-8):
        self._base_solve = base_solve
        self._residual = residual
        self.p = np.asarray(p, dtype=float)
        self.lam = residual.lam
        self.use_torque = use_torque
        self.tol = tol
        self.T = 0
        self._corrections: list[tuple[np.ndarray, np.ndarray]] = []

    @classmethod
    def from_laplace(cls, system: LaplaceSystem, lam: float = DEFAULT_LAMBDA,
                     operator: LaplaceOperator | None = None, use_torque: bool = True, tol: float = 1e-8,
                     batch: MeasurementBatch | None = None):
        """Start from L (and optionally a batch already folded into the base)."""
        op = operator or LaplaceOperator(system)
        if batch is None or batch.T == 0:
            nr = NormalResidual(system.L, system.b, lam)
            return cls(op.solve_normal, nr, solve_laplace(system, operator=op).values, use_torque, tol)
        state = cls.from_laplace(system, lam, op, use_torque, tol)
        for t in range(batch.T):
            recursive_update(state, *batch.timestep(t))
        return state

    @classmethod
    def from_augmented(cls, system: AugmentedSystem, use_torque: bool = True, tol: float = 1e-8):
        """Start from an assembled Q, d (direct factorisation; small systems)."""
        lu = factorize_spd(system.Q)
        p = solve_augmented(system, tol)
        nr = _QResidual(system.Q, system.d, system.lam)
        return cls(lu.solve, nr, p, use_torque, tol)

    def apply_inverse(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[:, None] if single else X
        Y = np.column_stack([self._base_solve(X2[:, j]) for j in range(X2.shape[1])])
        for A, H in self._corrections:
            Y -= A @ (H @ (A.T @ X2))
        return Y[:, 0] if single else Y

    def residual_vector(self) -> np.ndarray:
        return self._residual(self.p)

    def backward_error(self) -> float:
        return self._residual.backward_error(self.p)


class _QResidual(NormalResidual):
    """Residual Qp − d for a system given only by its assembled Q and d."""

    def __init__(self, Q, d, lam):
        self.Q = sp.csr_matrix(Q)
        self.d = np.asarray(d, dtype=float)
        self.lam = float(lam)
        self.blocks = []

    def __call__(self, p):
        r = self.Q @ p - self.d
        for R, g in self.blocks:
            r += self.lam * (R.T @ (R @ p - g))
        return r

    def scale(self, p):
        s = abs(self.Q) @ np.abs(p) + np.abs(self.d)
        for R, g in self.blocks:
            s += self.lam * (abs(R).T @ (abs(R) @ np.abs(p) + np.abs(g)))
        return s


def recursive_update(state: SolverState, N_t, W_t, force, torque, lam: float | None = None) -> SolverState:
    """Fold one timestep into ``state`` in place and return it."""
    lam = state.lam if lam is None else float(lam)
    if lam != state.lam:
        raise ConfigurationError("λ must stay fixed across recursive updates")
    blocks = [sp.csr_matrix(N_t)]
    values = [np.asarray(force, dtype=float).reshape(3)]
    if state.use_torque:
        blocks.append(sp.csr_matrix(W_t))
        values.append(np.asarray(torque, dtype=float).reshape(3))
    R = sp.vstack(blocks, format="csr")
    g = np.concatenate(values)
    if R.shape[1] != len(state.p):
        raise DimensionError(f"rows have {R.shape[1]} columns, state has {len(state.p)}")
    state.T += 1
    keep = np.diff(R.indptr) > 0
    if lam == 0 or not np.any(keep):
        return state
    R = R[keep]
    g = g[keep]
    U = R.T.toarray()
    A = state.apply_inverse(U)
    S = np.eye(U.shape[1]) + lam * (U.T @ A)
    S = 0.5 * (S + S.T)
    try:
        np.linalg.cholesky(S)
        H = lam * np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise ModelError("low-rank update broke positive definiteness") from exc
    state.p = state.p + A @ (H @ (g - R @ state.p))
    state._corrections.append((A, H))
    state._residual.add(R, g)
    if state.backward_error() > state.tol:
        state.p = state.p - state.apply_inverse(state.residual_vector())
        err = state.backward_error()
        if err > state.tol:
            raise ModelError(f"recursive solution drifted to backward error {err:.3e}")
    return state


def data_residual(p, batch: MeasurementBatch) -> float:
    """‖Np − f‖² + ‖Wp − τ‖²."""
    return float(np.sum((batch.N @ p - batch.f) ** 2) + np.sum((batch.W @ p - batch.tau) ** 2))


def batch_magnitude_error(p, batch: MeasurementBatch) -> float:
    """Mean over timesteps of | ‖N_t p‖ − ‖f_t‖ |."""
    est = (batch.N @ p).reshape(-1, 3)
    return mean_magnitude_error(est, batch.f.reshape(-1, 3))


def grid_search_lambda(system: LaplaceSystem, candidates, train: MeasurementBatch,
                       validation: MeasurementBatch, operator: LaplaceOperator | None = None,
                       use_torque: bool = True):
    """λ with the lowest mean force-magnitude error on ``validation``.

    Returns ``(best_lambda, {λ: error})``; ties keep the earlier candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise ConfigurationError("no λ candidates given")
    if len(candidates) == 1:
        return candidates[0], {}
    op = operator or LaplaceOperator(system)
    scores = {}
    for lam in candidates:
        p = fit_field(system, train, lam, operator=op, use_torque=use_torque).values
        scores[lam] = batch_magnitude_error(p, validation)
    best = min(candidates, key=lambda c: scores[c])
    return best, scores
