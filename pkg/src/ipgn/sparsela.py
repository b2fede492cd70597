"""Sparse kernels and Krylov solvers with preconditioner-weighted stopping rules.

CSR storage is delegated to scipy.sparse; matrices produced here are kept in
canonical form (sorted indices, no duplicates).  The two Krylov solvers monitor
the quantities their callers' convergence tables are defined by: PCG tracks the
B^-1-weighted residual norm sqrt(r'z), and left-preconditioned GMRES tracks the
Euclidean norm of the preconditioned residual (the Arnoldi least-squares
residual).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.io import mmread, mmwrite

from .errors import ConfigurationError, IndefiniteOperatorError

__all__ = [
    "KrylovReport",
    "spmv",
    "as_apply",
    "cg_solve",
    "gmres_solve",
    "write_matrix_market",
    "read_matrix_market",
]


@dataclass
class KrylovReport:
    """Outcome of one Krylov solve; `history` holds the monitored norm per
    iteration, starting with the initial value (length = iterations + 1)."""

    iterations: int
    relative_residual: float
    converged: bool
    history: np.ndarray = field(repr=False)


def spmv(matrix: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    """CSR matrix-vector product with an explicit shape check."""
    x = np.asarray(x, dtype=float)
    if matrix.shape[1] != x.shape[0]:
        raise ConfigurationError(
            f"shape mismatch: matrix is {matrix.shape}, vector has length {x.shape[0]}"
        )
    return matrix @ x


def as_apply(op, size: int | None = None):
    """Normalize a matrix / LinearOperator / callable / None into `v -> op(v)`.

    None means the identity (useful as a default preconditioner).
    """
    if op is None:
        return lambda v: v.copy()
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return lambda v: op @ v
    if hasattr(op, "matvec"):
        return op.matvec
    if callable(op):
        return op
    raise ConfigurationError(f"cannot interpret {type(op)!r} as a linear operator")


def cg_solve(op, precond, b, rel_tol: float = 1e-10, max_it: int = 1000):
    """Preconditioned CG for SPD `op`; terminates on the B^-1-weighted residual.

    The monitored quantity is sqrt(r'z) with z = precond(r), i.e. the residual
    norm in the inverse-preconditioner inner product.  Nonpositive curvature
    raises IndefiniteOperatorError carrying the current iterate.
    """
    apply_a = as_apply(op)
    apply_m = as_apply(precond)
    b = np.asarray(b, dtype=float)

    x = np.zeros_like(b)
    r = b.copy()
    z = apply_m(r)
    rz = float(r @ z)
    if rz < 0:
        raise IndefiniteOperatorError("preconditioner is not positive definite", iterate=x)
    norm0 = np.sqrt(rz)
    history = [norm0]
    if norm0 == 0.0:
        return x, KrylovReport(0, 0.0, True, np.array(history))

    p = z.copy()
    converged = False
    for k in range(1, max_it + 1):
        ap = apply_a(p)
        pap = float(p @ ap)
        if pap <= 0:
            raise IndefiniteOperatorError(
                f"nonpositive curvature p'Ap = {pap:.3e} at iteration {k}",
                iterate=x,
                iteration=k,
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        z = apply_m(r)
        rz_new = float(r @ z)
        history.append(np.sqrt(max(rz_new, 0.0)))
        if history[-1] <= rel_tol * norm0:
            converged = True
            break
        p = z + (rz_new / rz) * p
        rz = rz_new

    history = np.array(history)
    return x, KrylovReport(len(history) - 1, history[-1] / norm0, converged, history)


def gmres_solve(
    op,
    left_precond,
    b,
    rel_tol: float = 1e-8,
    max_it: int = 200,
    restart: int | None = None,
):
    """Left-preconditioned GMRES; terminates on ||M^-1 r||_2 <= rel_tol ||M^-1 r0||_2.

    The history records the Arnoldi least-squares residual, which equals the
    Euclidean norm of the preconditioned residual and is nonincreasing.  A happy
    breakdown counts as convergence.  `restart=None` runs a single full cycle.
    """
    apply_a = as_apply(op)
    apply_m = as_apply(left_precond)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]

    x = np.zeros_like(b)
    z0 = apply_m(b)
    norm0 = float(np.linalg.norm(z0))
    history = [norm0]
    if norm0 == 0.0:
        return x, KrylovReport(0, 0.0, True, np.array(history))

    cycle = max_it if restart is None else min(restart, max_it)
    breakdown_tol = 1e-14 * norm0
    total_its = 0
    converged = False

    while total_its < max_it and not converged:
        m = min(cycle, max_it - total_its)
        z = apply_m(b - apply_a(x)) if total_its else z0
        beta = float(np.linalg.norm(z))
        if beta <= rel_tol * norm0:
            converged = True
            break
        basis = np.zeros((m + 1, n))
        basis[0] = z / beta
        hess = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta

        j_used = 0
        for j in range(m):
            w = apply_m(apply_a(basis[j]))
            for i in range(j + 1):  # modified Gram-Schmidt
                hess[i, j] = float(w @ basis[i])
                w -= hess[i, j] * basis[i]
            hess[j + 1, j] = float(np.linalg.norm(w))
            happy = hess[j + 1, j] < breakdown_tol
            if not happy:
                basis[j + 1] = w / hess[j + 1, j]
            for i in range(j):  # previous Givens rotations
                hij, hi1j = hess[i, j], hess[i + 1, j]
                hess[i, j] = cs[i] * hij + sn[i] * hi1j
                hess[i + 1, j] = -sn[i] * hij + cs[i] * hi1j
            denom = np.hypot(hess[j, j], hess[j + 1, j])
            cs[j] = hess[j, j] / denom
            sn[j] = hess[j + 1, j] / denom
            hess[j, j] = denom
            hess[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            history.append(abs(g[j + 1]))
            j_used = j + 1
            total_its += 1
            if history[-1] <= rel_tol * norm0 or happy:
                converged = True
                break

        if j_used:
            y = np.linalg.solve(hess[:j_used, :j_used], g[:j_used])
            x = x + basis[:j_used].T @ y

    history = np.array(history)
    return x, KrylovReport(total_its, history[-1] / norm0, converged, history)


def write_matrix_market(path, matrix: sp.spmatrix):
    """Write a sparse matrix in Matrix Market exchange format."""
    mmwrite(str(path), sp.coo_matrix(matrix))


def read_matrix_market(path) -> sp.csr_matrix:
    """Read a Matrix Market file into canonical CSR form."""
    mat = sp.csr_matrix(mmread(str(path)))
    mat.sum_duplicates()
    mat.sort_indices()
    return mat
