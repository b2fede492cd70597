"""Dense small-mesh verification of the preconditioner eigenvalue theory.

Everything here is an oracle: blocks are reassembled densely with explicit
per-cell quadrature loops (a code path independent of the sparse CSR
assembly), eigenproblems are solved with dense LAPACK, and each verification
returns a report of literal numeric assertions.  Covered claims:

* the preconditioned step matrix has real eigenvalues >= 1 whose non-unit part
  equals one plus the spectrum of the W-preconditioned data-misfit Schur
  complement, bounded by the regularization-preconditioned spectrum;
* generalized eigenvalues ordered against two SPD right-hand matrices;
* defectiveness of the unperturbed preconditioned matrix and explicit
  diagonalization of its mass-perturbed variant;
* the per-iteration GMRES residual-reduction bound delta_k * kappa(Y);
* mesh/mu-(in)dependence of the leading generalized eigenvalues.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConfigurationError
from .ipm import IpmConfig, outer_loop
from .meshfem import build_mesh, interpolate
from .problem import ModelProblem, ProblemConfig, rho_true, u_data_exact
from .sparsela import gmres_solve

__all__ = [
    "DenseKkt",
    "SpectralReport",
    "dense_blocks",
    "build_dense_kkt",
    "model_snapshot",
    "verify_prop1",
    "verify_eig_ordering",
    "verify_diagonalizability",
    "verify_residual_bound",
    "spectrum_decay_study",
]

MAX_DENSE_UNKNOWNS = 2000

# 3-point Gauss-Legendre nodes/weights, written out for the oracle path
_GP = (-np.sqrt(0.6), 0.0, np.sqrt(0.6))
_GW = (5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0)


def _shape(xi, eta):
    return (
        0.25 * (1 - xi) * (1 - eta),
        0.25 * (1 + xi) * (1 - eta),
        0.25 * (1 + xi) * (1 + eta),
        0.25 * (1 - xi) * (1 + eta),
    )


def _dshape(xi, eta):
    dxi = (-0.25 * (1 - eta), 0.25 * (1 - eta), 0.25 * (1 + eta), -0.25 * (1 + eta))
    deta = (-0.25 * (1 - xi), -0.25 * (1 + xi), 0.25 * (1 + xi), 0.25 * (1 - xi))
    return dxi, deta


def dense_blocks(n: int, u: np.ndarray, rho: np.ndarray, gamma1: float, gamma2: float):
    """Assemble M, A, H_uu, J_u, J_rho, H_rr as dense arrays by direct
    per-cell quadrature (independent of the CSR assembly path)."""
    nn = (n + 1) ** 2
    h = 1.0 / n
    mass = np.zeros((nn, nn))
    stiff = np.zeros((nn, nn))
    mass_left = np.zeros((nn, nn))
    ju = np.zeros((nn, nn))
    jrho = np.zeros((nn, nn))
    detj = h * h / 4.0
    for cj in range(n):
        for ci in range(n):
            nodes = [cj * (n + 1) + ci, cj * (n + 1) + ci + 1,
                     (cj + 1) * (n + 1) + ci + 1, (cj + 1) * (n + 1) + ci]
            is_left = (ci + 0.5) * h < 0.5
            for a, xi in enumerate(_GP):
                for b, eta in enumerate(_GP):
                    w = _GW[a] * _GW[b] * detj
                    phi = _shape(xi, eta)
                    dxi, deta = _dshape(xi, eta)
                    gx = [d * 2.0 / h for d in dxi]
                    gy = [d * 2.0 / h for d in deta]
                    uq = sum(u[nodes[k]] * phi[k] for k in range(4))
                    rq = sum(rho[nodes[k]] * phi[k] for k in range(4))
                    gux = sum(u[nodes[k]] * gx[k] for k in range(4))
                    guy = sum(u[nodes[k]] * gy[k] for k in range(4))
                    react = 1.0 + uq * uq
                    for i in range(4):
                        gi = nodes[i]
                        for j in range(4):
                            gj = nodes[j]
                            mass[gi, gj] += w * phi[i] * phi[j]
                            grad_ij = gx[i] * gx[j] + gy[i] * gy[j]
                            stiff[gi, gj] += w * grad_ij
                            ju[gi, gj] += w * (rq * grad_ij + react * phi[i] * phi[j])
                            jrho[gi, gj] += w * (gux * gx[i] + guy * gy[i]) * phi[j]
                            if is_left:
                                mass_left[gi, gj] += w * phi[i] * phi[j]
    return {
        "M": mass,
        "A": stiff,
        "H_uu": mass_left,
        "Ju": ju,
        "Jrho": jrho,
        "H_rr": gamma1 * mass + gamma2 * stiff,
    }


@dataclass
class DenseKkt:
    """Dense step-system blocks at one iterate, plus the mass perturbation."""

    n_u: int
    n_rho: int
    H_uu: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    H_rr: np.ndarray = field(repr=False)
    Ju: np.ndarray = field(repr=False)
    Jrho: np.ndarray = field(repr=False)
    Mu: np.ndarray = field(repr=False)
    eps: float = 1e-4

    def __post_init__(self):
        total = 2 * self.n_u + self.n_rho
        if total > MAX_DENSE_UNKNOWNS:
            raise ConfigurationError(
                f"dense lab limited to {MAX_DENSE_UNKNOWNS} unknowns, got {total}"
            )

    # --- block compositions -------------------------------------------------

    def _saddle(self, huu):
        nu, nr = self.n_u, self.n_rho
        a = np.zeros((2 * nu + nr, 2 * nu + nr))
        a[:nu, :nu] = huu
        a[:nu, nu + nr :] = self.Ju.T
        a[nu : nu + nr, nu : nu + nr] = self.W
        a[nu : nu + nr, nu + nr :] = self.Jrho.T
        a[nu + nr :, :nu] = self.Ju
        a[nu + nr :, nu : nu + nr] = self.Jrho
        return a

    def saddle(self, perturbed: bool = False):
        return self._saddle(self.H_uu + self.eps * self.Mu if perturbed else self.H_uu)

    def gs_preconditioner(self, perturbed: bool = False):
        a = self.saddle(perturbed)
        a[self.n_u + self.n_rho :, self.n_u : self.n_u + self.n_rho] = 0.0
        return a

    def central_preconditioner(self):
        a = self.saddle()
        nu, nr = self.n_u, self.n_rho
        a[nu : nu + nr, nu + nr :] = 0.0
        a[nu + nr :, nu : nu + nr] = 0.0
        return a

    def misfit_schur(self, perturbed: bool = False):
        """Dense data-misfit part of the rho-Schur complement."""
        t = np.linalg.solve(self.Ju, self.Jrho)
        huu = self.H_uu + self.eps * self.Mu if perturbed else self.H_uu
        return t.T @ huu @ t

    def permutation(self):
        """Index order (u, lambda, rho) exposing the triangular structure."""
        nu, nr = self.n_u, self.n_rho
        return np.concatenate(
            [np.arange(nu), np.arange(nu + nr, 2 * nu + nr), np.arange(nu, nu + nr)]
        )

    def eigenvector_matrix(self, null_cut: float = 1e-14):
        """Explicit eigenvectors of the perturbed preconditioned matrix in the
        permuted basis, column-normalized; returns (Y, kappa(Y)).

        Columns whose Schur eigenvalue falls below `null_cut` times the largest
        belong to the (near-)null space of the parameter Jacobian; their
        eigenvectors are exactly (0, g_j), so the coupled block is zeroed
        rather than divided by a vanishing eigenvalue.
        """
        nu, nr = self.n_u, self.n_rho
        u_eps = np.zeros((2 * nu, 2 * nu))
        u_eps[:nu, :nu] = self.H_uu + self.eps * self.Mu
        u_eps[:nu, nu:] = self.Ju.T
        u_eps[nu:, :nu] = self.Ju
        v = np.hstack([np.zeros((nr, nu)), self.Jrho.T])

        w_vals, w_vecs = np.linalg.eigh(self.W)
        if w_vals.min() <= 0:
            raise ConfigurationError("W block is not positive definite")
        w_isqrt = (w_vecs / np.sqrt(w_vals)) @ w_vecs.T

        uinv_vt = np.linalg.solve(u_eps, v.T)
        s = -w_isqrt @ (v @ uinv_vt) @ w_isqrt
        s = 0.5 * (s + s.T)
        lam, q = np.linalg.eigh(s)
        if lam.min() < -null_cut * lam.max():
            raise ConfigurationError("perturbed Schur spectrum is not positive")
        keep = lam > null_cut * lam.max()
        x = np.zeros((2 * nu, nr))
        x[:, keep] = (uinv_vt @ w_isqrt @ q[:, keep]) / lam[keep]
        y = np.zeros((2 * nu + nr, 2 * nu + nr))
        y[: 2 * nu, : 2 * nu] = np.eye(2 * nu)
        y[: 2 * nu, 2 * nu :] = x
        y[2 * nu :, 2 * nu :] = w_isqrt @ q
        y /= np.linalg.norm(y, axis=0)
        return y, float(np.linalg.cond(y))


def build_dense_kkt(problem: ModelProblem, state, mu: float | None = None,
                    eps: float = 1e-4, observe_everywhere: bool = False) -> DenseKkt:
    """Dense-assemble every block at `state`; optionally re-center the bound
    duals at z = mu/gap so W carries the true barrier Hessian for that mu.

    `observe_everywhere` replaces the half-domain misfit Hessian by the full
    mass matrix (the full-rank observation variant of the theory).
    """
    mesh = problem.mesh
    blocks = dense_blocks(
        mesh.n, np.asarray(state.u, float), np.asarray(state.rho, float),
        problem.config.gamma1, problem.config.gamma2,
    )
    gap = np.asarray(state.rho, float) - problem.rho_lower
    z = (mu / gap) if mu is not None else np.asarray(state.z, float)
    ml = blocks["M"].sum(axis=1)
    w = blocks["H_rr"] + np.diag(ml * z / gap)
    nn = mesh.n_nodes
    return DenseKkt(
        n_u=nn, n_rho=nn,
        H_uu=blocks["M"] if observe_everywhere else blocks["H_uu"],
        W=w, H_rr=blocks["H_rr"],
        Ju=blocks["Ju"], Jrho=blocks["Jrho"], Mu=blocks["M"], eps=eps,
    )


def model_snapshot(n: int, mu_stop: float = 1e-2, config: ProblemConfig | None = None):
    """Run the optimizer on the n-grid until the barrier parameter first drops
    below `mu_stop`; returns (problem, state) for dense studies."""
    problem = ModelProblem(n, config or ProblemConfig())
    state, _ = outer_loop(problem, IpmConfig(), stop_when_mu_below=mu_stop)
    return problem, state


def load_dense_kkt(directory, step: int, eps: float = 1e-4) -> DenseKkt:
    """Ingest externally dumped step-system blocks (Matrix Market files written
    by the solver's dump hook) for cross-tool verification.

    The regularization block is W minus the dumped barrier-Hessian diagonal;
    the lumped mass stands in for the mass matrix in the perturbed studies
    (any positive definite perturbation is admissible there).
    """
    from pathlib import Path

    from .sparsela import read_matrix_market

    directory = Path(directory)

    def load(name):
        return read_matrix_market(directory / f"step{step:03d}_{name}.mtx").toarray()

    h_uu, w, ju, jrho = load("H_uu"), load("W"), load("Ju"), load("Jrho")
    return DenseKkt(
        n_u=ju.shape[0], n_rho=jrho.shape[1],
        H_uu=h_uu, W=w, H_rr=w - load("H_logbar"),
        Ju=ju, Jrho=jrho, Mu=load("ML"), eps=eps,
    )


@dataclass
class SpectralReport:
    """Outcome of one verification; `checks` maps assertion names to booleans."""

    passed: bool
    checks: dict
    details: dict = field(default_factory=dict)
    preconditioned_eigs: np.ndarray | None = None
    gen_eigs_w: np.ndarray | None = None
    gen_eigs_reg: np.ndarray | None = None
    unit_count: int | None = None
    kappa_y: float | None = None
    delta_k: np.ndarray | None = None


def _gen_eigs_desc(a, b):
    """Descending generalized eigenvalues of the symmetric pair (a, b SPD)."""
    vals = sla.eigh(0.5 * (a + a.T), 0.5 * (b + b.T), eigvals_only=True)
    return vals[::-1]


def verify_prop1(dense: DenseKkt, tol: float = 1e-8) -> SpectralReport:
    """Eigenvalue relation between the preconditioned matrix and the two
    generalized misfit-Hessian spectra."""
    checks, details = {}, {}

    w_eigs = np.linalg.eigvalsh(0.5 * (dense.W + dense.W.T))
    huu_eigs = np.linalg.eigvalsh(0.5 * (dense.H_uu + dense.H_uu.T))
    gap_eigs = np.linalg.eigvalsh(0.5 * ((dense.W - dense.H_rr) + (dense.W - dense.H_rr).T))
    scale = max(w_eigs.max(), 1.0)
    pre_ok = (
        w_eigs.min() > 0
        and huu_eigs.min() >= -tol * scale
        and gap_eigs.min() >= -tol * scale
    )
    checks["preconditions"] = bool(pre_ok)
    if not pre_ok:
        details["precondition_failure"] = {
            "min_eig_W": float(w_eigs.min()),
            "min_eig_H_uu": float(huu_eigs.min()),
            "min_eig_W_minus_Hrr": float(gap_eigs.min()),
        }
        return SpectralReport(passed=False, checks=checks, details=details)

    t = np.linalg.solve(dense.gs_preconditioner(), dense.saddle())
    eigs = np.linalg.eigvals(t)
    hd = dense.misfit_schur()
    lam_w = np.maximum(_gen_eigs_desc(hd, dense.W), 0.0)
    lam_reg = np.maximum(_gen_eigs_desc(hd, dense.H_rr), 0.0)

    checks["real"] = bool(np.abs(eigs.imag).max() <= tol)
    real = np.sort(eigs.real)[::-1]
    checks["at_least_one"] = bool(real.min() >= 1.0 - tol)
    nr = dense.n_rho
    match = np.abs(real[:nr] - (1.0 + lam_w)).max()
    rest = np.abs(real[nr:] - 1.0).max() if real.size > nr else 0.0
    checks["non_unit_matches_w_spectrum"] = bool(max(match, rest) <= tol)
    checks["bounded_by_reg_spectrum"] = bool(np.all(real[:nr] <= 1.0 + lam_reg + tol))

    unit_count = int(np.sum(np.abs(eigs - 1.0) <= tol))
    rank_tol = int(np.sum(lam_w > tol))  # numerical rank of Hd in the W metric at tol
    checks["unit_count"] = bool(unit_count == 2 * dense.n_u + nr - rank_tol)
    svals = np.linalg.svd(hd, compute_uv=False)
    details.update(
        unit_count=unit_count,
        rank_tol=rank_tol,
        rank_svd=int(np.sum(svals > svals.max() * 1e-12)),
        max_imag=float(np.abs(eigs.imag).max()),
        min_real=float(real.min()),
        match_error=float(max(match, rest)),
    )
    return SpectralReport(
        passed=all(checks.values()),
        checks=checks,
        details=details,
        preconditioned_eigs=real,
        gen_eigs_w=lam_w,
        gen_eigs_reg=lam_reg,
        unit_count=unit_count,
    )


def verify_eig_ordering(trials: int = 200, dim: int = 12, rng=None,
                        tol: float = 1e-10) -> SpectralReport:
    """Random trials of the generalized-eigenvalue ordering: enlarging the SPD
    right-hand matrix can only shrink every eigenvalue, in order."""
    rng = np.random.default_rng(0) if rng is None else rng
    violations = 0
    worst = 0.0
    for _ in range(trials):
        rank = rng.integers(dim // 2, dim + 1)
        g = rng.standard_normal((dim, rank))
        a = g @ g.T
        f = rng.standard_normal((dim, dim))
        c = f @ f.T + 0.5 * np.eye(dim)
        s = rng.standard_normal((dim, rng.integers(1, dim)))
        b = c + s @ s.T
        beta = _gen_eigs_desc(a, b)
        xi = _gen_eigs_desc(a, c)
        gapmax = float((beta - xi).max())
        worst = max(worst, gapmax)
        if gapmax > tol:
            violations += 1
    checks = {"ordering": violations == 0}
    return SpectralReport(
        passed=violations == 0,
        checks=checks,
        details={"trials": trials, "violations": violations, "worst_excess": worst},
    )


def explicit_diagonalization(dense: DenseKkt, perturbed: bool = True, dps: int = 40,
                             null_cut: float = 1e-30):
    """Build the explicit eigenvector matrix in extended precision and measure
    the off-diagonal part of the similarity-transformed preconditioned matrix.

    The eigenvector basis is intrinsically ill-conditioned here (the parameter
    Jacobian of this discretization carries a checkerboard-type near-null
    space), so double precision cannot certify the diagonalization; the block
    formulas are evaluated with mpmath instead.  Null modes of the Schur
    spectrum get the exact eigenvectors (0, g_j).  Returns
    (max offdiagonal entry, kappa(Y) of the column-normalized basis).
    """
    from mpmath import mp

    nu, nr = dense.n_u, dense.n_rho
    h_eff = dense.H_uu + (dense.eps * dense.Mu if perturbed else 0.0)
    u_eff = np.zeros((2 * nu, 2 * nu))
    u_eff[:nu, :nu] = h_eff
    u_eff[:nu, nu:] = dense.Ju.T
    u_eff[nu:, :nu] = dense.Ju
    v = np.hstack([np.zeros((nr, nu)), dense.Jrho.T])

    with mp.workdps(dps):
        u_mp = mp.matrix(u_eff.tolist())
        v_mp = mp.matrix(v.tolist())
        w_mp = mp.matrix(dense.W.tolist())

        ew, qw = mp.eigsy(w_mp)
        if min(ew) <= 0:
            raise ConfigurationError("W block is not positive definite")
        w_half = qw * mp.diag([mp.sqrt(e) for e in ew]) * qw.T
        w_ihalf = qw * mp.diag([1 / mp.sqrt(e) for e in ew]) * qw.T

        uinv_vt = mp.inverse(u_mp) * v_mp.T
        s = -(w_ihalf * (v_mp * uinv_vt) * w_ihalf)
        s = (s + s.T) * mp.mpf(0.5)
        lam, q = mp.eigsy(s)
        lam_max = max(lam)
        bg = uinv_vt * (w_ihalf * q)
        x = mp.zeros(2 * nu, nr)
        for j in range(nr):
            if lam[j] > null_cut * lam_max:
                for i in range(2 * nu):
                    x[i, j] = bg[i, j] / lam[j]

        # With Y = [[I, X], [0, G]], G = W^(-1/2)Q:  Y^-1 (T_p Y) = [[I, D12], [0, D22]]
        # where D22 = I + Q'SQ and D12 = BG - X (Q'SQ); both exactly diagonal /
        # zero when the construction diagonalizes.
        d22 = q.T * (s * q)
        d12 = bg - x * d22
        offdiag = mp.mpf(0)
        for i in range(2 * nu):
            for j in range(nr):
                offdiag = max(offdiag, abs(d12[i, j]))
        for i in range(nr):
            for j in range(nr):
                if i != j:
                    offdiag = max(offdiag, abs(d22[i, j]))

        g = np.array((w_ihalf * q).tolist(), dtype=float)
        x_np = np.array(x.tolist(), dtype=float)
        offdiag = float(offdiag)

    y = np.zeros((2 * nu + nr, 2 * nu + nr))
    y[: 2 * nu, : 2 * nu] = np.eye(2 * nu)
    y[: 2 * nu, 2 * nu :] = x_np
    y[2 * nu :, 2 * nu :] = g
    y /= np.linalg.norm(y, axis=0)
    return offdiag, float(np.linalg.cond(y))


def verify_diagonalizability(dense: DenseKkt, expect_defect: bool = True,
                             tol_offdiag: float = 1e-8, tol_unit: float = 1e-6,
                             dps: int = 40) -> SpectralReport:
    """Defect of the unperturbed preconditioned matrix, and explicit
    diagonalization of the perturbed one with its eigenvector conditioning.

    With `expect_defect` (rank-deficient misfit Hessian) the unperturbed matrix
    must show eigenvalue-1 geometric multiplicity strictly below the algebraic
    one, and the mass-perturbed matrix must diagonalize explicitly.  Without it
    (full-rank misfit Hessian) the construction must already diagonalize the
    unperturbed matrix.
    """
    if dense.eps <= 0:
        raise ConfigurationError("perturbation size must be positive")
    checks, details = {}, {}

    if expect_defect:
        t = np.linalg.solve(dense.gs_preconditioner(), dense.saddle())
        eigs = np.linalg.eigvals(t)
        algebraic = int(np.sum(np.abs(eigs - 1.0) <= tol_unit))
        svals = np.linalg.svd(t - np.eye(t.shape[0]), compute_uv=False)
        rank = int(np.sum(svals > svals.max() * 1e-10))
        geometric = t.shape[0] - rank
        checks["defect_detection"] = bool(geometric < algebraic)
        details.update(algebraic_multiplicity=algebraic, geometric_multiplicity=geometric)
        offdiag, kappa_y = explicit_diagonalization(dense, perturbed=True, dps=dps)
        checks["perturbed_diagonalizable"] = bool(offdiag <= tol_offdiag)
    else:
        offdiag, kappa_y = explicit_diagonalization(dense, perturbed=False, dps=dps)
        checks["diagonalizable_without_perturbation"] = bool(offdiag <= tol_offdiag)
    details.update(offdiag=offdiag, kappa_y=kappa_y)

    return SpectralReport(
        passed=all(checks.values()), checks=checks, details=details, kappa_y=kappa_y
    )


def residual_reduction_factors(dense: DenseKkt, k_max: int) -> np.ndarray:
    """Cumulative products of lambda/(1+lambda) over the descending spectrum of
    the regularization-preconditioned perturbed misfit Schur complement."""
    lam = np.maximum(_gen_eigs_desc(dense.misfit_schur(perturbed=True), dense.H_rr), 0.0)
    ratios = lam / (1.0 + lam)
    return np.cumprod(ratios)[: k_max]


def verify_residual_bound(dense: DenseKkt, n_rhs: int = 5, rel_tol: float = 1e-10,
                          rng=None, slack: float = 1e-6) -> SpectralReport:
    """GMRES preconditioned-residual ratios against the delta_k * kappa(Y) bound."""
    rng = np.random.default_rng(0) if rng is None else rng
    a_eps = dense.saddle(perturbed=True)
    lu = sla.lu_factor(dense.gs_preconditioner(perturbed=True))
    _, kappa_y = dense.eigenvector_matrix()

    checks, details = {}, {}
    worst = -np.inf
    all_ok = True
    n = a_eps.shape[0]
    deltas = None
    for trial in range(n_rhs):
        b = rng.standard_normal(n)
        _, report = gmres_solve(
            lambda v: a_eps @ v, lambda v: sla.lu_solve(lu, v), b,
            rel_tol=rel_tol, max_it=min(n, 200),
        )
        hist = report.history
        if deltas is None or len(deltas) < len(hist) - 1:
            deltas = residual_reduction_factors(dense, len(hist) - 1)
        ratios = hist[1:] / hist[0]
        bound = np.concatenate([[1.0], deltas])[: len(ratios)] * kappa_y * (1.0 + slack)
        excess = float((ratios / bound).max())
        worst = max(worst, excess)
        all_ok = all_ok and bool(np.all(ratios <= bound))
    checks["residual_bound"] = all_ok
    details.update(worst_ratio_over_bound=worst, kappa_y=kappa_y, n_rhs=n_rhs)
    return SpectralReport(
        passed=all_ok, checks=checks, details=details,
        kappa_y=kappa_y, delta_k=deltas,
    )


# --- spectrum decay study ------------------------------------------------------


def _study_state(problem: ModelProblem, mu: float):
    """Deterministic mesh-comparable iterate: interpolated continuum fields with
    a mid-sized bound gap and centered duals."""
    u = interpolate(problem.mesh, u_data_exact).values
    rho = interpolate(problem.mesh, rho_true).values + 0.5
    gap = rho - problem.rho_lower
    z = mu / gap

    class _Snap:
        pass

    snap = _Snap()
    snap.u, snap.rho, snap.z, snap.mu = u, rho, z, mu
    return snap


def lanczos_generalized(apply_a, b_mat, k: int = 20, iters: int = 80, seed: int = 0):
    """Leading eigenvalues of B^-1 A (A symmetric PSD, B SPD sparse) by Lanczos
    in the B inner product with full reorthogonalization."""
    n = b_mat.shape[0]
    solve_b = splu(sp.csc_matrix(b_mat)).solve
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    bq = b_mat @ q
    q /= np.sqrt(q @ bq)
    basis = [q]
    b_basis = [b_mat @ q]
    alphas, betas = [], []
    for _ in range(min(iters, n)):
        qj = basis[-1]
        w = solve_b(apply_a(qj))
        alpha = float(w @ b_basis[-1])
        alphas.append(alpha)
        w = w - alpha * qj
        if len(basis) > 1:
            w -= betas[-1] * basis[-2]
        for qi, bqi in zip(basis, b_basis):  # full reorthogonalization
            w -= float(bqi @ w) * qi
        bw = b_mat @ w
        beta = float(np.sqrt(max(w @ bw, 0.0)))
        if beta < 1e-14:
            break
        betas.append(beta)
        basis.append(w / beta)
        b_basis.append(bw / beta)
    tri = np.diag(alphas)
    if betas:
        off = np.array(betas[: len(alphas) - 1])
        tri += np.diag(off, 1) + np.diag(off, -1)
    vals = np.linalg.eigvalsh(tri)[::-1]
    return vals[:k]


def spectrum_decay_study(ns, mus, config: ProblemConfig | None = None, n_eigs: int = 20):
    """Leading generalized eigenvalues of the misfit Schur complement against
    the regularization and the barrier-augmented blocks, per (mesh, mu).

    Returns a list of row dicts (mesh, mu, index, eig_reg, eig_w).
    """
    config = config or ProblemConfig()
    rows = []
    for n in ns:
        problem = ModelProblem(build_mesh(n), config)
        for mu in mus:
            snap = _study_state(problem, mu)
            if 3 * problem.n_nodes <= MAX_DENSE_UNKNOWNS:
                dense = build_dense_kkt(problem, snap, eps=0.0)
                hd = dense.misfit_schur()
                eig_reg = _gen_eigs_desc(hd, dense.H_rr)[:n_eigs]
                eig_w = _gen_eigs_desc(hd, dense.W)[:n_eigs]
            else:
                ops = problem.linearize(snap.u, snap.rho)
                ju_lu = splu(sp.csc_matrix(ops.Ju))
                huu, jrho = ops.H_uu, ops.Jrho

                def hd_apply(x):
                    return jrho.T @ ju_lu.solve(huu @ ju_lu.solve(jrho @ x))

                gap = snap.rho - problem.rho_lower
                w = ops.H_rr + sp.diags(problem.ML * snap.z / gap)
                eig_reg = lanczos_generalized(hd_apply, sp.csr_matrix(ops.H_rr), k=n_eigs)
                eig_w = lanczos_generalized(hd_apply, sp.csr_matrix(w), k=n_eigs)
            for idx in range(len(eig_reg)):
                rows.append({
                    "mesh": n, "mu": mu, "index": idx + 1,
                    "eig_reg": float(eig_reg[idx]), "eig_w": float(eig_w[idx]),
                })
    return rows
