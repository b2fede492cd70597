"""Assembly and iterative solution of the 3x3 saddle-point step systems.

Each optimization step linearizes the perturbed optimality conditions and,
after eliminating the bound-multiplier direction, leaves a symmetric system in
(u, rho, lambda) directions.  Two spectrally related strategies solve it: GMRES
on the full system with a block Gauss-Seidel (triangular-under-permutation)
preconditioner, and CG on the rho-Schur complement preconditioned by the
regularization-plus-barrier block.  Central and constraint preconditioners are
provided for comparison studies.  The bound-multiplier direction is recovered
by exact elementwise back-substitution.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InteriorViolationError
from .multigrid import EllipticBlockSolver
from .sparsela import KrylovReport, cg_solve, gmres_solve

__all__ = [
    "KktSystem",
    "KktDirection",
    "InnerSolvers",
    "build_kkt",
    "apply_saddle",
    "BlockGaussSeidelPreconditioner",
    "CentralPreconditioner",
    "ConstraintPreconditioner",
    "solve_fullspace_gmres",
    "solve_reduced_cg",
    "reduced_misfit_hessian_matvec",
    "backsub_zhat",
]


@dataclass
class KktSystem:
    """Blocks and right-hand side of one step system, frozen at an iterate."""

    H_uu: sp.csr_matrix
    W: sp.csr_matrix  # regularization Hessian + diagonal log-barrier Hessian
    Ju: sp.csr_matrix
    Jrho: sp.csr_matrix
    ML: np.ndarray  # lumped-mass diagonal
    b_u: np.ndarray
    b_rho: np.ndarray
    b_lam: np.ndarray
    mu: float
    gap: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)

    @property
    def n_u(self) -> int:
        return self.Ju.shape[0]

    @property
    def n_rho(self) -> int:
        return self.Jrho.shape[1]

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.b_u, self.b_rho, self.b_lam])

    def split(self, x: np.ndarray):
        nu, nr = self.n_u, self.n_rho
        return x[:nu], x[nu : nu + nr], x[nu + nr :]


@dataclass
class KktDirection:
    u: np.ndarray
    rho: np.ndarray
    lam: np.ndarray
    z: np.ndarray | None = None


def build_kkt(problem, state, ops=None) -> KktSystem:
    """Assemble the step system at `state` (an object with u, rho, lam, z, mu)."""
    ops = problem.linearize(state.u, state.rho) if ops is None else ops
    gap = state.rho - problem.rho_lower
    if np.any(gap <= 0) or np.any(state.z <= 0):
        raise InteriorViolationError("iterate is not strictly interior")
    r_u = ops.grad_u + ops.Ju.T @ state.lam
    r_rho = ops.grad_rho + ops.Jrho.T @ state.lam - problem.ML * state.z
    r_z = state.z * gap - state.mu
    h_logbar = problem.ML * state.z / gap
    w = (ops.H_rr + sp.diags(h_logbar)).tocsr()
    w.sort_indices()
    return KktSystem(
        H_uu=ops.H_uu,
        W=w,
        Ju=ops.Ju,
        Jrho=ops.Jrho,
        ML=problem.ML,
        b_u=-r_u,
        b_rho=-(r_rho + problem.ML * r_z / gap),
        b_lam=-ops.c,
        mu=state.mu,
        gap=gap,
        z=state.z.copy(),
    )


def apply_saddle(sys: KktSystem, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product with the full symmetric step matrix."""
    xu, xr, xl = sys.split(x)
    yu = sys.H_uu @ xu + sys.Ju.T @ xl
    yr = sys.W @ xr + sys.Jrho.T @ xl
    yl = sys.Ju @ xu + sys.Jrho @ xr
    return np.concatenate([yu, yr, yl])


class InnerSolvers:
    """The two elliptic block solvers shared by every preconditioner apply.

    The state Jacobian is symmetric for this problem, so its transpose solve
    reuses the same multigrid operator; the interface still distinguishes the
    two so nonsymmetric constraints remain supportable.
    """

    def __init__(self, sys: KktSystem, n: int | None = None, rediscretize=None,
                 inner_tol: float = 1e-13):
        self.ju = EllipticBlockSolver(
            sys.Ju, n=n, rediscretize=rediscretize, rel_tol=inner_tol, name="J_u"
        )
        self.w = EllipticBlockSolver(sys.W, n=n, rel_tol=inner_tol, name="W")

    def solve_ju(self, b):
        return self.ju.solve(b)

    def solve_jut(self, b):
        # J_u = J_u' here; a nonsymmetric constraint would swap in its own solver
        return self.ju.solve(b)

    def solve_w(self, b):
        return self.w.solve(b)

    @property
    def total_solves(self) -> int:
        return self.ju.solves + self.w.solves

    @property
    def total_iterations(self) -> int:
        return self.ju.iterations_total + self.w.iterations_total


class BlockGaussSeidelPreconditioner:
    """Triangular-under-permutation preconditioner: three block solves per apply."""

    def __init__(self, sys: KktSystem, solvers: InnerSolvers):
        self.sys = sys
        self.solvers = solvers
        self.applications = 0

    def __call__(self, b: np.ndarray) -> np.ndarray:
        bu, br, bl = self.sys.split(b)
        xu = self.solvers.solve_ju(bl)
        xl = self.solvers.solve_jut(bu - self.sys.H_uu @ xu)
        xr = self.solvers.solve_w(br - self.sys.Jrho.T @ xl)
        self.applications += 1
        return np.concatenate([xu, xr, xl])


class CentralPreconditioner:
    """Decoupled variant: the parameter block ignores the constraint coupling."""

    def __init__(self, sys: KktSystem, solvers: InnerSolvers):
        self.sys = sys
        self.solvers = solvers
        self.applications = 0

    def __call__(self, b: np.ndarray) -> np.ndarray:
        bu, br, bl = self.sys.split(b)
        xr = self.solvers.solve_w(br)
        xu = self.solvers.solve_ju(bl)
        xl = self.solvers.solve_jut(bu - self.sys.H_uu @ xu)
        self.applications += 1
        return np.concatenate([xu, xr, xl])


class ConstraintPreconditioner:
    """Factored variant with the full constraint row; five block solves per apply."""

    def __init__(self, sys: KktSystem, solvers: InnerSolvers):
        self.sys = sys
        self.solvers = solvers
        self._gs = BlockGaussSeidelPreconditioner(sys, solvers)
        self.applications = 0

    def __call__(self, b: np.ndarray) -> np.ndarray:
        w = self._gs(b)
        wu, wr, wl = self.sys.split(w)
        s = self.solvers.solve_ju(self.sys.Jrho @ wr)
        xu = wu - s
        xl = wl + self.solvers.solve_jut(self.sys.H_uu @ s)
        self.applications += 1
        return np.concatenate([xu, wr, xl])


PRECONDITIONERS = {
    "blockgs": BlockGaussSeidelPreconditioner,
    "central": CentralPreconditioner,
    "constraint": ConstraintPreconditioner,
}


def solve_fullspace_gmres(
    sys: KktSystem,
    solvers: InnerSolvers,
    rel_tol: float = 1e-8,
    max_it: int = 200,
    preconditioner: str = "blockgs",
) -> tuple[KktDirection, KrylovReport]:
    """Left-preconditioned GMRES on the full step system."""
    precond = PRECONDITIONERS[preconditioner](sys, solvers)
    x, report = gmres_solve(
        lambda v: apply_saddle(sys, v), precond, sys.rhs(), rel_tol=rel_tol, max_it=max_it
    )
    xu, xr, xl = sys.split(x)
    return KktDirection(u=xu, rho=xr, lam=xl), report


def reduced_misfit_hessian_matvec(sys: KktSystem, solvers: InnerSolvers, x: np.ndarray):
    """Data-misfit part of the Schur complement applied to a parameter vector
    (two block solves and a rectangular matvec pair)."""
    xu = -solvers.solve_ju(sys.Jrho @ x)
    xl = -solvers.solve_jut(sys.H_uu @ xu)
    return sys.Jrho.T @ xl


def solve_reduced_cg(
    sys: KktSystem,
    solvers: InnerSolvers,
    rel_tol: float = 1e-8,
    max_it: int = 200,
) -> tuple[KktDirection, KrylovReport]:
    """CG on the rho-Schur complement, preconditioned by the W block."""
    t = solvers.solve_ju(sys.b_lam)
    s = solvers.solve_jut(sys.b_u - sys.H_uu @ t)
    bhat = sys.b_rho - sys.Jrho.T @ s

    def schur(v):
        return sys.W @ v + reduced_misfit_hessian_matvec(sys, solvers, v)

    xr, report = cg_solve(schur, solvers.solve_w, bhat, rel_tol=rel_tol, max_it=max_it)
    xu = solvers.solve_ju(sys.b_lam - sys.Jrho @ xr)
    xl = solvers.solve_jut(sys.b_u - sys.H_uu @ xu)
    return KktDirection(u=xu, rho=xr, lam=xl), report


def backsub_zhat(gap: np.ndarray, z: np.ndarray, mu: float, rho_hat: np.ndarray) -> np.ndarray:
    """Bound-multiplier direction from the eliminated complementarity row."""
    return -(z + (z * rho_hat - mu) / gap)


def dump_blocks(sys: KktSystem, directory, step: int):
    """Write every block of one step system in Matrix Market exchange format,
    for external cross-checking of the spectral claims.  The barrier-Hessian
    diagonal is included so the regularization block is recoverable."""
    from pathlib import Path

    from .sparsela import write_matrix_market

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h_logbar = sys.ML * sys.z / sys.gap
    for name, mat in (
        ("H_uu", sys.H_uu), ("W", sys.W), ("Ju", sys.Ju), ("Jrho", sys.Jrho),
        ("ML", sp.diags(sys.ML)), ("H_logbar", sp.diags(h_logbar)),
    ):
        write_matrix_market(directory / f"step{step:03d}_{name}.mtx", mat)
