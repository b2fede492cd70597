"""Geometric multigrid for SPD operators assembled on the structured Q1 grids.

The hierarchy uses full coarsening n -> n/2 -> ... -> 4 with bilinear
interpolation; coarse operators come from the Galerkin triple product P' A P,
or from re-discretization with injected coefficient fields when the caller
supplies a callback.  One V-cycle with symmetric Gauss-Seidel smoothing is a
symmetric positive definite operator and serves as the CG preconditioner.
Grids whose n is not 4 times a power of two fall back to symmetric
Gauss-Seidel preconditioning with a logged warning.
"""

import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numba import njit
from scipy.sparse.linalg import LinearOperator

from .errors import InnerSolveError
from .sparsela import cg_solve

__all__ = ["GeometricMultigrid", "EllipticBlockSolver", "multigrid_vcycle_solver", "prolongation"]

log = logging.getLogger(__name__)


@njit(cache=True)
def _gs_sweep(indptr, indices, data, x, b, reverse):
    """In-place Gauss-Seidel sweep over a CSR matrix."""
    n = x.shape[0]
    if reverse:
        start, stop, step = n - 1, -1, -1
    else:
        start, stop, step = 0, n, 1
    for i in range(start, stop, step):
        s = b[i]
        diag = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            v = data[k]
            if j == i:
                diag = v
            else:
                s -= v * x[j]
        x[i] = s / diag


def _sgs(matrix: sp.csr_matrix, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """One symmetric Gauss-Seidel sweep (forward then backward), in place."""
    _gs_sweep(matrix.indptr, matrix.indices, matrix.data, x, b, False)
    _gs_sweep(matrix.indptr, matrix.indices, matrix.data, x, b, True)
    return x


def hierarchy_levels(n: int, coarsest: int = 4) -> list[int] | None:
    """Grid sizes n, n/2, ..., coarsest, or None if n is not coarsest*2^k."""
    levels = [n]
    while levels[-1] > coarsest:
        if levels[-1] % 2 != 0:
            return None
        levels.append(levels[-1] // 2)
    return levels if levels[-1] == coarsest else None


def prolongation(coarse_n: int) -> sp.csr_matrix:
    """Bilinear interpolation from the coarse_n grid to the 2*coarse_n grid."""
    m = coarse_n
    nf = 2 * m
    rows, cols, vals = [], [], []

    def cidx(i, j):
        return j * (m + 1) + i

    for jf in range(nf + 1):
        for if_ in range(nf + 1):
            row = jf * (nf + 1) + if_
            i2, ri = divmod(if_, 2)
            j2, rj = divmod(jf, 2)
            if ri == 0 and rj == 0:
                rows.append(row), cols.append(cidx(i2, j2)), vals.append(1.0)
            elif ri == 1 and rj == 0:
                for di in (0, 1):
                    rows.append(row), cols.append(cidx(i2 + di, j2)), vals.append(0.5)
            elif ri == 0 and rj == 1:
                for dj in (0, 1):
                    rows.append(row), cols.append(cidx(i2, j2 + dj)), vals.append(0.5)
            else:
                for dj in (0, 1):
                    for di in (0, 1):
                        rows.append(row), cols.append(cidx(i2 + di, j2 + dj)), vals.append(0.25)
    p = sp.coo_matrix((vals, (rows, cols)), shape=((nf + 1) ** 2, (m + 1) ** 2)).tocsr()
    p.sort_indices()
    return p


class GeometricMultigrid:
    """Symmetric V-cycle for an SPD matrix on the n-grid (direct solve at n=4)."""

    def __init__(self, matrix: sp.csr_matrix, n: int, rediscretize=None, sweeps: int = 1):
        ns = hierarchy_levels(n)
        if ns is None:
            raise ValueError(f"grid n={n} does not refine down to the coarsest n=4")
        self.ns = ns
        self.sweeps = sweeps
        self.mats = [sp.csr_matrix(matrix)]
        self.prolongs = []
        for coarse in ns[1:]:
            p = prolongation(coarse)
            self.prolongs.append(p)
            if rediscretize is not None:
                coarse_mat = sp.csr_matrix(rediscretize(coarse))
            else:
                coarse_mat = (p.T @ self.mats[-1] @ p).tocsr()
            coarse_mat.sort_indices()
            self.mats.append(coarse_mat)
        self._coarse_lu = sla.lu_factor(self.mats[-1].toarray())

    @property
    def shape(self):
        return self.mats[0].shape

    def vcycle(self, b: np.ndarray) -> np.ndarray:
        """Apply one V-cycle to b (approximate inverse action from a zero guess)."""
        return self._vcycle(0, np.asarray(b, dtype=float))

    def _vcycle(self, level: int, b: np.ndarray) -> np.ndarray:
        if level == len(self.mats) - 1:
            return sla.lu_solve(self._coarse_lu, b)
        a = self.mats[level]
        x = np.zeros_like(b)
        for _ in range(self.sweeps):
            _sgs(a, x, b)
        p = self.prolongs[level]
        x += p @ self._vcycle(level + 1, p.T @ (b - a @ x))
        for _ in range(self.sweeps):
            _sgs(a, x, b)
        return x

    def as_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.vcycle)


class EllipticBlockSolver:
    """CG solve of an SPD block, preconditioned by a geometric V-cycle.

    Falls back to a symmetric Gauss-Seidel preconditioner (with a logged
    warning) when the grid does not support the hierarchy.  Keeps counters so
    callers can audit inner-solve budgets.
    """

    def __init__(
        self,
        matrix: sp.csr_matrix,
        n: int | None = None,
        rediscretize=None,
        rel_tol: float = 1e-13,
        max_it: int = 5000,
        name: str = "block",
    ):
        self.matrix = sp.csr_matrix(matrix)
        self.matrix.sort_indices()
        self.rel_tol = rel_tol
        self.max_it = max_it
        self.name = name
        self.solves = 0
        self.iterations_total = 0
        if n is not None and hierarchy_levels(n) is not None:
            self.mg = GeometricMultigrid(self.matrix, n, rediscretize=rediscretize)
            self._precond = self.mg.vcycle
        else:
            if n is not None:
                log.warning(
                    "grid n=%s has no power-of-two path to the coarsest level; "
                    "falling back to symmetric Gauss-Seidel preconditioned CG for %s",
                    n,
                    name,
                )
            self.mg = None
            self._precond = self._sgs_precond

    def _sgs_precond(self, r: np.ndarray) -> np.ndarray:
        return _sgs(self.matrix, np.zeros_like(r), np.asarray(r, dtype=float))

    def preconditioner_operator(self) -> LinearOperator:
        """The V-cycle (or SGS) approximate inverse as a LinearOperator."""
        return LinearOperator(self.matrix.shape, matvec=self._precond)

    def solve(self, b: np.ndarray, rel_tol: float | None = None) -> np.ndarray:
        x, report = cg_solve(
            self.matrix,
            self._precond,
            b,
            rel_tol=self.rel_tol if rel_tol is None else rel_tol,
            max_it=self.max_it,
        )
        self.solves += 1
        self.iterations_total += report.iterations
        self.last_report = report
        if not report.converged:
            raise InnerSolveError(
                f"inner solve for block '{self.name}' stalled at relative "
                f"residual {report.relative_residual:.3e}",
                block=self.name,
                report=report,
            )
        return x

    def reset_counters(self):
        self.solves = 0
        self.iterations_total = 0


def multigrid_vcycle_solver(matrix, n, rediscretize=None, rel_tol=1e-13, name="block"):
    """Convenience constructor mirroring the solver factory used by the KKT layer."""
    return EllipticBlockSolver(matrix, n=n, rediscretize=rediscretize, rel_tol=rel_tol, name=name)
