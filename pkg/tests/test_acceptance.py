"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The expensive experiment runs are shared through module-scoped fixtures and
requested inside the timed section of the first criterion that needs them, so
the printed wall time covers everything that criterion required.
"""

import time

import numpy as np
import pytest
import scipy.linalg as sla

from ipgn.cli import RunConfig, run_morozov, run_mu_trace, run_scaling_study
from ipgn.ipm import IpmConfig, outer_loop
from ipgn.problem import ModelProblem, ProblemConfig
from ipgn.sparsela import gmres_solve
from ipgn.spectral import (
    build_dense_kkt,
    model_snapshot,
    verify_diagonalizability,
    verify_eig_ordering,
    verify_prop1,
    verify_residual_bound,
)

MOROZOV_GAMMAS = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)


def report(number, ok, budget_s, elapsed, detail):
    line = (f"ACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'} "
            f"({elapsed:6.1f}s / budget {budget_s:.0f}s): {detail}")
    print(line)
    assert ok, line
    assert elapsed <= budget_s, line


@pytest.fixture(scope="module")
def morozov_result(tmp_path_factory):
    cfg = RunConfig(command="morozov", mesh=64, gammas=MOROZOV_GAMMAS,
                    out=str(tmp_path_factory.mktemp("morozov")), seed=0)
    return run_morozov(cfg)


@pytest.fixture(scope="module")
def gamma_star(morozov_result):
    return morozov_result["gamma_estimate"]


@pytest.fixture(scope="module")
def scaling_result(gamma_star, tmp_path_factory):
    cfg = RunConfig(command="scaling-study", meshes=(32, 64, 128), gamma=gamma_star,
                    out=str(tmp_path_factory.mktemp("scaling")), seed=0)
    return run_scaling_study(cfg)


@pytest.fixture(scope="module")
def mu_trace_result(gamma_star, tmp_path_factory):
    cfg = RunConfig(command="mu-trace", mesh=64, gamma=gamma_star,
                    out=str(tmp_path_factory.mktemp("mutrace")), seed=0)
    return run_mu_trace(cfg)


@pytest.fixture(scope="module")
def snapshot8():
    return model_snapshot(8, mu_stop=1e-2)


def test_criterion_1_derivative_correctness(rng):
    t0 = time.monotonic()
    p = ModelProblem(16, ProblemConfig(seed=0))
    u = rng.standard_normal(p.n_nodes) * 0.3
    rho = 1.2 + rng.uniform(0, 1, p.n_nodes)
    v, w = rng.standard_normal(p.n_nodes), rng.standard_normal(p.n_nodes)
    f0 = p.objective(u, rho)
    gu, gr = p.gradients(u, rho)
    c0 = p.constraint(u, rho)
    ju, jr = p.assemble_Ju(u, rho), p.assemble_Jrho(u)

    slope_sets = {}
    epss = (1e-3, 1e-4, 1e-5)
    slope_sets["grad_u"] = [
        abs((p.objective(u + e * v, rho) - f0) / e - gu @ v) / e for e in epss
    ]
    slope_sets["grad_rho"] = [
        abs((p.objective(u, rho + e * w) - f0) / e - gr @ w) / e for e in epss
    ]
    slope_sets["J_u"] = [
        np.linalg.norm((p.constraint(u + e * v, rho) - c0) / e - ju @ v) / e for e in epss
    ]
    stable = all(max(s) / min(s) < 1.5 for s in slope_sets.values())
    lin = np.linalg.norm(p.constraint(u, rho + w) - c0 - jr @ w)
    exact_rho = lin <= 1e-12 * np.linalg.norm(c0)
    elapsed = time.monotonic() - t0
    detail = ("stable O(eps) slopes " +
              ", ".join(f"{k}:{max(s)/min(s):.3f}" for k, s in slope_sets.items()) +
              f"; rho-linearity residual {lin:.1e}")
    report(1, stable and exact_rho, 30, elapsed, detail)


def test_criterion_2_prop1(snapshot8):
    t0 = time.monotonic()
    problem, state = snapshot8
    oks, errs = [], []
    for mu in (1e-1, 1e-3, 1e-5):
        dense = build_dense_kkt(problem, state, mu=mu)
        rep = verify_prop1(dense, tol=1e-8)
        oks.append(rep.passed)
        errs.append(rep.details.get("match_error", np.nan))
    elapsed = time.monotonic() - t0
    report(2, all(oks), 60, elapsed,
           f"four checks at mu=1e-1/1e-3/1e-5; non-unit match errors "
           + "/".join(f"{e:.1e}" for e in errs))


def test_criterion_3_eig_ordering():
    t0 = time.monotonic()
    rep = verify_eig_ordering(trials=200, dim=12, rng=np.random.default_rng(0))
    elapsed = time.monotonic() - t0
    report(3, rep.passed, 10, elapsed,
           f"{rep.details['trials']} trials, {rep.details['violations']} violations, "
           f"worst excess {rep.details['worst_excess']:.1e}")


def test_criterion_4_diagonalizability():
    t0 = time.monotonic()
    problem, state = model_snapshot(6, mu_stop=1e-2)
    dense = build_dense_kkt(problem, state, mu=1e-2, eps=1e-4)
    rep = verify_diagonalizability(dense, expect_defect=True)
    elapsed = time.monotonic() - t0
    report(4, rep.passed, 30, elapsed,
           f"defect: geometric {rep.details['geometric_multiplicity']} < algebraic "
           f"{rep.details['algebraic_multiplicity']}; perturbed off-diagonal "
           f"{rep.details['offdiag']:.1e} (kappa(Y) {rep.details['kappa_y']:.1e})")


def test_criterion_5_residual_bound(snapshot8):
    t0 = time.monotonic()
    problem, state = snapshot8
    dense = build_dense_kkt(problem, state, mu=1e-2, eps=1e-4)
    rep = verify_residual_bound(dense, n_rhs=5, rng=np.random.default_rng(0))
    elapsed = time.monotonic() - t0
    report(5, rep.passed, 60, elapsed,
           f"5 right-hand sides, worst ratio/bound {rep.details['worst_ratio_over_bound']:.1e}, "
           f"kappa(Y) {rep.kappa_y:.1e}")


def test_criterion_6_exact_schur_two_iterations():
    t0 = time.monotonic()
    problem, state = model_snapshot(4, mu_stop=1e-2)
    dense = build_dense_kkt(problem, state, mu=1e-2)
    nu, nr = dense.n_u, dense.n_rho
    pre = dense.gs_preconditioner()
    pre[nu : nu + nr, nu : nu + nr] = dense.misfit_schur() + dense.W
    lu = sla.lu_factor(pre)
    a = dense.saddle()
    rng = np.random.default_rng(1)
    counts = []
    for _ in range(3):
        _, rep = gmres_solve(lambda v: a @ v, lambda v: sla.lu_solve(lu, v),
                             rng.standard_normal(a.shape[0]), rel_tol=1e-10, max_it=20)
        assert rep.converged
        counts.append(rep.iterations)
    elapsed = time.monotonic() - t0
    report(6, max(counts) <= 2, 10, elapsed,
           f"exact-Schur preconditioned iteration counts {counts} at tol 1e-10")


def test_criterion_7_algorithmic_scaling(request):
    t0 = time.monotonic()
    table = request.getfixturevalue("scaling_result")["per_mesh"]
    meshes = (32, 64, 128)
    solves = [table[n]["gmres-blockgs"]["solves"] for n in meshes]
    gm = [table[n]["gmres-blockgs"]["mean_iters"] for n in meshes]
    cg = [table[n]["cg-reduced"]["mean_iters"] for n in meshes]
    cg_solves = [table[n]["cg-reduced"]["solves"] for n in meshes]
    ok_solves = max(solves) <= 1.2 * min(solves)
    ok_gmres = (max(gm) - min(gm) <= 2.0) and max(gm) <= 15.0
    ok_paths = all(abs(a - b) <= 2.0 for a, b in zip(gm, cg))
    ok_path_solves = all(abs(a - b) <= 1 for a, b in zip(solves, cg_solves))
    elapsed = time.monotonic() - t0
    report(7, ok_solves and ok_gmres and ok_paths and ok_path_solves, 900, elapsed,
           f"solves {solves} (cg path {cg_solves}), gmres means "
           + "/".join(f"{v:.2f}" for v in gm)
           + ", cg means " + "/".join(f"{v:.2f}" for v in cg))


def test_criterion_8_mu_robustness(request):
    t0 = time.monotonic()
    traces = request.getfixturevalue("mu_trace_result")
    it = traces["gmres-blockgs"]["iters"]
    mus = traces["gmres-blockgs"]["mu"]
    tail = it[5:]
    spread = max(tail) - min(tail)
    decades = np.log10(mus[5] / mus[-1])
    central = traces["gmres-central"]["iters"]
    m = min(len(central), len(it))
    frac_above = sum(1 for a, b in zip(central[:m], it[:m]) if a > b) / m
    ok = spread <= 5 and decades >= 4.0 and frac_above >= 0.8
    elapsed = time.monotonic() - t0
    report(8, ok, 300, elapsed,
           f"post-step-5 spread {spread} over {decades:.1f} mu-decades; "
           f"central above block-GS at {frac_above:.0%} of steps")


def test_criterion_9_morozov_crossing(request):
    t0 = time.monotonic()
    results = request.getfixturevalue("morozov_result")
    bracket = results["bracket"]
    gaps = results["misfit_minus_noise"]
    ok_bracket = bracket is not None and 3e-4 <= bracket[0] and bracket[1] <= 3e-3
    ok_monotone = all(b >= a for a, b in zip(gaps, gaps[1:]))
    elapsed = time.monotonic() - t0
    report(9, ok_bracket and ok_monotone, 600, elapsed,
           f"crossing bracketed in {bracket}, misfit monotone over gammas")


def test_criterion_10_regularization_trend():
    t0 = time.monotonic()
    means = []
    for gamma in (1e-5, 1e-4, 1e-3, 1e-2, 1e-1):
        p = ModelProblem(44, ProblemConfig(gamma1=gamma, gamma2=gamma, seed=0))
        _, record = outer_loop(p, IpmConfig())
        means.append(record.mean_krylov_iters())
    nonincreasing = all(b <= a + 1e-12 for a, b in zip(means, means[1:]))
    drop = means[0] - means[-1]
    elapsed = time.monotonic() - t0
    report(10, nonincreasing and drop >= 3.0, 600, elapsed,
           "dim(rho)=2025 means " + "/".join(f"{v:.2f}" for v in means)
           + f", drop {drop:.2f}")


def test_criterion_11_out_of_scope_documented(request):
    # the strong-scaling study and >1e5-unknown rows are excluded by design;
    # criteria 7-8 carry the property-based substitutes at desk scale
    t0 = time.monotonic()
    table = request.getfixturevalue("scaling_result")["per_mesh"]
    largest = max(entry["dim_rho"] for entry in table.values())
    ok = largest <= 1e5
    elapsed = time.monotonic() - t0
    report(11, ok, 10, elapsed,
           f"desk-scale substitute: largest dim(rho) {largest} (<1e5); "
           "multicore strong scaling intentionally not reproduced")
