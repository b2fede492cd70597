"""Filter line-search interior-point outer loop with Gauss-Newton steps.

The loop solves a sequence of log-barrier subproblems with a monotone
barrier-parameter schedule.  Progress is measured in mass-weighted norms so the
stopping behavior is mesh independent; inverse-mass weights use the lumped
diagonal.  Step acceptance follows the standard filter rules on the
(feasibility, barrier-objective) pair with an Armijo switch near feasibility;
a failed backtracking surfaces as a diagnosable error (no restoration phase).
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InteriorViolationError, LineSearchError, MaxStepsError
from .kkt import InnerSolvers, backsub_zhat, build_kkt, solve_fullspace_gmres, solve_reduced_cg

__all__ = [
    "IpmConfig",
    "IpmState",
    "ErrorMeasures",
    "Filter",
    "ExperimentRecord",
    "barrier_objective",
    "kkt_residuals",
    "error_measures",
    "fraction_to_boundary",
    "initial_state",
    "outer_loop",
]


@dataclass(frozen=True)
class IpmConfig:
    mu0: float = 0.05
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    kappa_eps: float = 10.0
    tol: float = 1e-6
    tau_min: float = 0.99
    s_max: float = 100.0
    gamma_theta: float = 1e-5
    gamma_phi: float = 1e-5
    delta: float = 1.0
    s_theta: float = 1.1
    s_phi: float = 2.3
    eta_phi: float = 1e-4
    alpha_min: float = 1e-12
    kappa_sigma: float = 1e10
    max_steps: int = 100
    krylov_tol: float = 1e-8
    krylov_max_it: int = 300
    inner_tol: float = 1e-13
    solver: str = "gmres-blockgs"  # or cg-reduced | gmres-central | gmres-constraint

    def __post_init__(self):
        if not 0 < self.kappa_mu < 1:
            raise ConfigurationError("kappa_mu must lie in (0, 1)")
        if not 1 < self.theta_mu < 2:
            raise ConfigurationError("theta_mu must lie in (1, 2)")
        if self.tol <= 0:
            raise ConfigurationError("tolerance must be positive")
        if not 0 < self.tau_min < 1:
            raise ConfigurationError("tau_min must lie in (0, 1)")


@dataclass
class IpmState:
    u: np.ndarray
    rho: np.ndarray
    lam: np.ndarray
    z: np.ndarray
    mu: float

    def copy(self) -> "IpmState":
        return IpmState(self.u.copy(), self.rho.copy(), self.lam.copy(), self.z.copy(), self.mu)


@dataclass
class ErrorMeasures:
    e_stat: float
    e_feas: float
    e_compl: float
    e_total: float


@dataclass
class StepRecord:
    step: int
    mu: float
    e_stat: float
    e_feas: float
    e_compl: float
    e_total: float
    alpha_p: float
    alpha_d: float
    krylov_iters: int
    inner_cg_total: int


CSV_HEADER = [
    "step", "mu", "e_stat", "e_feas", "e_compl", "e_total",
    "alpha_p", "alpha_d", "krylov_iters", "inner_cg_total",
]


@dataclass
class ExperimentRecord:
    """Append-only per-step log of one optimizer run."""

    rows: list = field(default_factory=list)
    converged: bool = False

    def append(self, row: StepRecord):
        self.rows.append(row)

    @property
    def n_solves(self) -> int:
        return len(self.rows)

    def mean_krylov_iters(self) -> float:
        return float(np.mean([r.krylov_iters for r in self.rows]))

    def krylov_iters(self) -> list:
        return [r.krylov_iters for r in self.rows]

    def mu_trace(self) -> list:
        return [r.mu for r in self.rows]

    def write_csv(self, path, manifest_ref: str = "manifest.json"):
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema=ipgn-steps/v1 manifest={manifest_ref}\n")
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for r in self.rows:
                writer.writerow([
                    r.step, f"{r.mu:.17g}", f"{r.e_stat:.17g}", f"{r.e_feas:.17g}",
                    f"{r.e_compl:.17g}", f"{r.e_total:.17g}", f"{r.alpha_p:.17g}",
                    f"{r.alpha_d:.17g}", r.krylov_iters, r.inner_cg_total,
                ])


class Filter:
    """Pareto filter over (feasibility, barrier objective) pairs."""

    def __init__(self):
        self.entries: list[tuple[float, float]] = []

    def dominates(self, theta: float, phi: float) -> bool:
        return any(theta >= t and phi >= p for t, p in self.entries)

    def add(self, theta: float, phi: float):
        self.entries = [(t, p) for t, p in self.entries if not (t >= theta and p >= phi)]
        self.entries.append((theta, phi))

    def clear(self):
        self.entries.clear()


# --- measures ---------------------------------------------------------------


def barrier_objective(problem, u, rho, mu: float) -> float:
    """Objective minus mu times the mass-weighted log of the bound gaps."""
    gap = np.asarray(rho, dtype=float) - problem.rho_lower
    if np.any(gap <= 0):
        raise InteriorViolationError("barrier objective evaluated outside the interior")
    barrier = float(np.sum(problem.M @ np.log(gap)))
    return problem.objective(u, rho) - mu * barrier


def barrier_grad(problem, ops, rho, mu: float):
    """Gradients of the barrier objective with respect to (u, rho)."""
    gap = np.asarray(rho, dtype=float) - problem.rho_lower
    return ops.grad_u, ops.grad_rho - mu * problem.ML / gap


def kkt_residuals(problem, state: IpmState, ops=None, mu: float | None = None):
    """Residuals of the perturbed first-order optimality system."""
    ops = problem.linearize(state.u, state.rho) if ops is None else ops
    gap = state.rho - problem.rho_lower
    r_u = ops.grad_u + ops.Ju.T @ state.lam
    r_rho = ops.grad_rho + ops.Jrho.T @ state.lam - problem.ML * state.z
    r_lam = ops.c
    r_z = state.z * gap - (state.mu if mu is None else mu)
    return r_u, r_rho, r_lam, r_z


def _inv_mass_norm(problem, v: np.ndarray) -> float:
    # lumped inverse: spectrally equivalent to the consistent inverse-mass norm
    return float(np.sqrt(np.sum(v * v / problem.ML)))


def _mass_norm(problem, v: np.ndarray) -> float:
    return float(np.sqrt(v @ (problem.M @ v)))


def error_measures(
    problem, state: IpmState, mu: float, ops=None, s_max: float = 100.0
) -> ErrorMeasures:
    """Scaled stationarity / feasibility / complementarity measures."""
    r_u, r_rho, r_lam, r_z = kkt_residuals(problem, state, ops=ops, mu=mu)
    e_stat = float(np.sqrt(_inv_mass_norm(problem, r_u) ** 2 + _inv_mass_norm(problem, r_rho) ** 2))
    e_feas = _inv_mass_norm(problem, r_lam)
    e_compl = float(np.sum(problem.M @ np.abs(r_z)))
    z_norm = _mass_norm(problem, state.z)
    lam_norm = _mass_norm(problem, state.lam)
    s_c = max(s_max, z_norm) / s_max
    s_d = max(0.5 * lam_norm + 0.5 * z_norm, s_max) / s_max
    e_total = max(e_stat / s_d, e_feas, e_compl / s_c)
    return ErrorMeasures(e_stat, e_feas, e_compl, e_total)


def fraction_to_boundary(gap, rho_hat, z, z_hat, mu: float, tau_min: float = 0.99):
    """Largest primal/dual steps keeping gaps and multipliers fractionally interior."""
    tau = max(tau_min, 1.0 - mu)

    def max_step(vals, step):
        neg = step < 0
        if not np.any(neg):
            return 1.0
        return float(min(1.0, np.min(tau * vals[neg] / -step[neg])))

    return max_step(np.asarray(gap, float), np.asarray(rho_hat, float)), max_step(
        np.asarray(z, float), np.asarray(z_hat, float)
    )


# --- outer loop ---------------------------------------------------------------


def initial_state(problem, config: IpmConfig) -> IpmState:
    """Default start: zero state/multipliers, mid-gap parameter, centered duals."""
    n = problem.n_nodes
    rho0 = problem.rho_lower + 0.5
    z0 = np.full(n, config.mu0 / 0.5)
    return IpmState(u=np.zeros(n), rho=rho0, lam=np.zeros(n), z=z0, mu=config.mu0)


def _clip_duals(state: IpmState, kappa_sigma: float, problem):
    gap = state.rho - problem.rho_lower
    lo = state.mu / (kappa_sigma * gap)
    hi = kappa_sigma * state.mu / gap
    np.clip(state.z, lo, hi, out=state.z)


def _next_mu(mu: float, config: IpmConfig) -> float:
    return max(config.tol / 10.0, min(config.kappa_mu * mu, mu**config.theta_mu))


def _solve_step(problem, state, sys, config):
    rediscretize = problem.ju_rediscretized(state.u, state.rho)
    solvers = InnerSolvers(sys, n=problem.mesh.n, rediscretize=rediscretize,
                           inner_tol=config.inner_tol)
    if config.solver == "cg-reduced":
        direction, report = solve_reduced_cg(
            sys, solvers, rel_tol=config.krylov_tol, max_it=config.krylov_max_it
        )
    else:
        name = config.solver.removeprefix("gmres-") if config.solver != "gmres" else "blockgs"
        direction, report = solve_fullspace_gmres(
            sys, solvers, rel_tol=config.krylov_tol, max_it=config.krylov_max_it,
            preconditioner=name or "blockgs",
        )
    return direction, report, solvers


def _filter_line_search(problem, state, ops, direction, alpha_max, mu, config, filt):
    """Backtrack from the fraction-to-boundary cap until a trial is acceptable."""
    theta0 = _inv_mass_norm(problem, ops.c)
    phi0 = barrier_objective(problem, state.u, state.rho, mu)
    gu, gr = barrier_grad(problem, ops, state.rho, mu)
    dphi = float(gu @ direction.u + gr @ direction.rho)

    alpha = alpha_max
    while alpha >= config.alpha_min:
        u_t = state.u + alpha * direction.u
        rho_t = state.rho + alpha * direction.rho
        theta_t = _inv_mass_norm(problem, problem.constraint(u_t, rho_t))
        phi_t = barrier_objective(problem, u_t, rho_t, mu)
        if not filt.dominates(theta_t, phi_t):
            armijo_switch = dphi < 0 and alpha * (-dphi) ** config.s_phi > (
                config.delta * theta0**config.s_theta
            )
            if armijo_switch:
                accepted = phi_t <= phi0 + config.eta_phi * alpha * dphi
                ftype = True
            else:
                accepted = (theta_t <= (1 - config.gamma_theta) * theta0) or (
                    phi_t <= phi0 - config.gamma_phi * theta0
                )
                ftype = False
            if accepted:
                if not ftype:
                    filt.add((1 - config.gamma_theta) * theta0, phi0 - config.gamma_phi * theta0)
                return alpha
        alpha *= 0.5
    raise LineSearchError(
        "backtracking line search failed",
        diagnostics={
            "theta": theta0, "phi": phi0, "dphi": dphi,
            "alpha_max": alpha_max, "mu": mu,
        },
    )


def outer_loop(
    problem,
    config: IpmConfig | None = None,
    state: IpmState | None = None,
    stop_when_mu_below: float | None = None,
    step_callback=None,
) -> tuple[IpmState, ExperimentRecord]:
    """Drive barrier subproblems to optimality; returns the final iterate and log.

    `stop_when_mu_below` returns early once the barrier parameter first drops
    below the given value (used to harvest mid-run iterates for spectral
    studies).  `step_callback(step, state, sys)` runs after each accepted step,
    e.g. to dump the assembled blocks.
    """
    config = config or IpmConfig()
    state = initial_state(problem, config) if state is None else state.copy()
    record = ExperimentRecord()
    filt = Filter()

    for step in range(1, config.max_steps + 1):
        ops = problem.linearize(state.u, state.rho)
        err0 = error_measures(problem, state, 0.0, ops=ops, s_max=config.s_max)
        if err0.e_total <= config.tol:
            record.converged = True
            return state, record

        # barrier subproblem met its tolerance: tighten mu (monotone schedule)
        err_mu = error_measures(problem, state, state.mu, ops=ops, s_max=config.s_max)
        while err_mu.e_total <= config.kappa_eps * state.mu:
            new_mu = _next_mu(state.mu, config)
            if new_mu >= state.mu:
                break
            state.mu = new_mu
            filt.clear()
            _clip_duals(state, config.kappa_sigma, problem)
            err_mu = error_measures(problem, state, state.mu, ops=ops, s_max=config.s_max)
            if stop_when_mu_below is not None and state.mu < stop_when_mu_below:
                return state, record

        sys = build_kkt(problem, state, ops=ops)
        direction, report, solvers = _solve_step(problem, state, sys, config)
        z_hat = backsub_zhat(sys.gap, state.z, state.mu, direction.rho)

        alpha_p_max, alpha_d_max = fraction_to_boundary(
            sys.gap, direction.rho, state.z, z_hat, state.mu, config.tau_min
        )
        alpha_p = _filter_line_search(
            problem, state, ops, direction, alpha_p_max, state.mu, config, filt
        )

        state.u += alpha_p * direction.u
        state.rho += alpha_p * direction.rho
        state.lam += alpha_p * direction.lam
        state.z += alpha_d_max * z_hat
        _clip_duals(state, config.kappa_sigma, problem)

        record.append(StepRecord(
            step=step, mu=state.mu,
            e_stat=err_mu.e_stat, e_feas=err_mu.e_feas,
            e_compl=err_mu.e_compl, e_total=err_mu.e_total,
            alpha_p=alpha_p, alpha_d=alpha_d_max,
            krylov_iters=report.iterations,
            inner_cg_total=solvers.total_iterations,
        ))
        if step_callback is not None:
            step_callback(step, state, sys)

    raise MaxStepsError(f"no convergence within {config.max_steps} steps")
