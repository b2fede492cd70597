import numpy as np
import pytest
import scipy.sparse as sp

from ipgn.errors import InteriorViolationError
from ipgn.ipm import IpmConfig, initial_state, outer_loop
from ipgn.kkt import (
    BlockGaussSeidelPreconditioner,
    CentralPreconditioner,
    ConstraintPreconditioner,
    InnerSolvers,
    apply_saddle,
    backsub_zhat,
    build_kkt,
    reduced_misfit_hessian_matvec,
    solve_fullspace_gmres,
    solve_reduced_cg,
)
from ipgn.problem import ModelProblem, ProblemConfig


@pytest.fixture(scope="module")
def snapshot4():
    """A mid-run iterate and its step system on the 4-cell grid."""
    problem = ModelProblem(4, ProblemConfig(seed=0))
    state, _ = outer_loop(problem, IpmConfig(), stop_when_mu_below=1e-2)
    sys = build_kkt(problem, state)
    return problem, state, sys


@pytest.fixture(scope="module")
def snapshot8():
    problem = ModelProblem(8, ProblemConfig(seed=0))
    state, _ = outer_loop(problem, IpmConfig(), stop_when_mu_below=1e-2)
    sys = build_kkt(problem, state)
    return problem, state, sys


def dense_saddle(sys):
    nu, nr = sys.n_u, sys.n_rho
    a = np.zeros((2 * nu + nr, 2 * nu + nr))
    a[:nu, :nu] = sys.H_uu.toarray()
    a[:nu, nu + nr :] = sys.Ju.T.toarray()
    a[nu : nu + nr, nu : nu + nr] = sys.W.toarray()
    a[nu : nu + nr, nu + nr :] = sys.Jrho.T.toarray()
    a[nu + nr :, :nu] = sys.Ju.toarray()
    a[nu + nr :, nu : nu + nr] = sys.Jrho.toarray()
    return a


def dense_gs(sys):
    a = dense_saddle(sys)
    a[sys.n_u + sys.n_rho :, sys.n_u : sys.n_u + sys.n_rho] = 0.0
    return a


class TestBuildKkt:
    def test_rhs_at_centered_duals(self, problem8):
        # with z = mu/gap the complementarity residual vanishes: b_rho = -r_rho
        state = initial_state(problem8, IpmConfig())
        sys = build_kkt(problem8, state)
        ops = problem8.linearize(state.u, state.rho)
        r_rho = ops.grad_rho + ops.Jrho.T @ state.lam - problem8.ML * state.z
        np.testing.assert_allclose(sys.b_rho, -r_rho, atol=1e-14)

    def test_logbar_hessian_centered(self, problem8):
        state = initial_state(problem8, IpmConfig())
        sys = build_kkt(problem8, state)
        gap = state.rho - problem8.rho_lower
        diag = (sys.W - problem8.H_rr).diagonal()
        np.testing.assert_allclose(diag, state.mu * problem8.ML / gap**2, rtol=1e-14)

    def test_interior_violation(self, problem8):
        state = initial_state(problem8, IpmConfig())
        state.rho[3] = problem8.rho_lower[3]
        with pytest.raises(InteriorViolationError):
            build_kkt(problem8, state)

    def test_dense_reconstruction_matches_oracle(self, snapshot4):
        # dense reassembly of every block straight from quadrature
        from ipgn.spectral import build_dense_kkt

        problem, state, sys = snapshot4
        dense = build_dense_kkt(problem, state)
        np.testing.assert_allclose(sys.H_uu.toarray(), dense.H_uu, atol=1e-14)
        np.testing.assert_allclose(sys.W.toarray(), dense.W, atol=1e-14)
        np.testing.assert_allclose(sys.Ju.toarray(), dense.Ju, atol=1e-14)
        np.testing.assert_allclose(sys.Jrho.toarray(), dense.Jrho, atol=1e-14)


class TestApplySaddle:
    def test_zero_state_blocks(self, snapshot4, rng):
        _, _, sys = snapshot4
        xr = rng.standard_normal(sys.n_rho)
        x = np.concatenate([np.zeros(sys.n_u), xr, np.zeros(sys.n_u)])
        y = apply_saddle(sys, x)
        yu, yr, yl = sys.split(y)
        np.testing.assert_allclose(yu, 0.0, atol=1e-16)
        np.testing.assert_allclose(yr, sys.W @ xr, atol=1e-14)
        np.testing.assert_allclose(yl, sys.Jrho @ xr, atol=1e-14)

    def test_symmetry_on_probes(self, snapshot4, rng):
        _, _, sys = snapshot4
        n = 2 * sys.n_u + sys.n_rho
        for _ in range(4):
            x, y = rng.standard_normal(n), rng.standard_normal(n)
            s1 = y @ apply_saddle(sys, x)
            s2 = x @ apply_saddle(sys, y)
            assert abs(s1 - s2) <= 1e-12 * max(abs(s1), 1.0)

    def test_matches_dense_matvec(self, snapshot4, rng):
        _, _, sys = snapshot4
        a = dense_saddle(sys)
        x = rng.standard_normal(a.shape[0])
        np.testing.assert_allclose(apply_saddle(sys, x), a @ x, atol=1e-12)


class TestBlockGaussSeidel:
    def test_is_inverse_of_dense_preconditioner(self, snapshot4, rng):
        problem, state, sys = snapshot4
        solvers = InnerSolvers(sys, n=problem.mesh.n)
        precond = BlockGaussSeidelPreconditioner(sys, solvers)
        atilde = dense_gs(sys)
        n = atilde.shape[0]
        for k in rng.integers(0, n, size=3):
            e = np.zeros(n)
            e[k] = 1.0
            x = precond(atilde @ e)
            assert np.linalg.norm(x - e) <= 1e-10

    def test_partial_rhs_shortcut(self, snapshot4, rng):
        problem, _, sys = snapshot4
        solvers = InnerSolvers(sys, n=problem.mesh.n)
        precond = BlockGaussSeidelPreconditioner(sys, solvers)
        br = rng.standard_normal(sys.n_rho)
        b = np.concatenate([np.zeros(sys.n_u), br, np.zeros(sys.n_u)])
        xu, xr, xl = sys.split(precond(b))
        np.testing.assert_allclose(xu, 0.0, atol=1e-14)
        np.testing.assert_allclose(xl, 0.0, atol=1e-14)
        np.testing.assert_allclose(
            xr, np.linalg.solve(sys.W.toarray(), br), atol=1e-9
        )

    def test_exactly_three_inner_solves(self, snapshot4, rng):
        problem, _, sys = snapshot4
        solvers = InnerSolvers(sys, n=problem.mesh.n)
        precond = BlockGaussSeidelPreconditioner(sys, solvers)
        precond(rng.standard_normal(2 * sys.n_u + sys.n_rho))
        assert solvers.total_solves == 3


class TestAlternativePreconditioners:
    def test_central_three_solves_and_symmetric(self, snapshot4, rng):
        problem, _, sys = snapshot4
        solvers = InnerSolvers(sys, n=problem.mesh.n)
        central = CentralPreconditioner(sys, solvers)
        n = 2 * sys.n_u + sys.n_rho
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        before = solvers.total_solves
        s1 = y @ central(x)
        assert solvers.total_solves - before == 3
        s2 = x @ central(y)
        assert abs(s1 - s2) <= 1e-10 * max(abs(s1), 1.0)

    def test_constraint_five_solves_matches_dense(self, snapshot4, rng):
        problem, _, sys = snapshot4
        solvers = InnerSolvers(sys, n=problem.mesh.n)
        precond = ConstraintPreconditioner(sys, solvers)
        nu, nr = sys.n_u, sys.n_rho
        # dense factored form: the triangular preconditioner times the coupling transform
        atilde = dense_gs(sys)
        t = np.eye(2 * nu + nr)
        juinv_jr = np.linalg.solve(sys.Ju.toarray(), sys.Jrho.toarray())
        t[:nu, nu : nu + nr] = juinv_jr
        t[nu + nr :, nu : nu + nr] = -np.linalg.solve(
            sys.Ju.toarray().T, sys.H_uu.toarray() @ juinv_jr
        )
        acon = atilde @ t
        b = rng.standard_normal(2 * nu + nr)
        before = solvers.total_solves
        x = precond(b)
        assert solvers.total_solves - before == 5
        np.testing.assert_allclose(x, np.linalg.solve(acon, b), atol=1e-8)


class TestFullSpaceGmres:
    def test_zero_misfit_hessian_degenerate_preconditioners(self, snapshot4):
        # with no data term the preconditioned matrix is I plus a nilpotent
        # coupling: minimum polynomial degree two for the triangular variant,
        # while the factored constraint preconditioner equals the matrix itself
        import dataclasses

        problem, _, sys = snapshot4
        sys0 = dataclasses.replace(sys, H_uu=sp.csr_matrix(sys.H_uu.shape))
        solvers = InnerSolvers(sys0, n=problem.mesh.n)
        _, report = solve_fullspace_gmres(sys0, solvers, rel_tol=1e-8)
        assert report.converged and report.iterations <= 2
        _, report = solve_fullspace_gmres(
            sys0, solvers, rel_tol=1e-8, preconditioner="constraint"
        )
        assert report.converged and report.iterations == 1

    def test_agrees_with_dense_solve(self, snapshot4):
        problem, _, sys = snapshot4
        solvers = InnerSolvers(sys, n=problem.mesh.n)
        direction, report = solve_fullspace_gmres(sys, solvers, rel_tol=1e-10)
        assert report.converged
        a = dense_saddle(sys)
        x = np.linalg.solve(a, sys.rhs())
        got = np.concatenate([direction.u, direction.rho, direction.lam])
        assert np.linalg.norm(got - x) <= 1e-7 * np.linalg.norm(x)


class TestReducedHessian:
    def test_zero_misfit_gives_zero(self, snapshot4, rng):
        import dataclasses

        problem, _, sys = snapshot4
        sys0 = dataclasses.replace(sys, H_uu=sp.csr_matrix(sys.H_uu.shape))
        solvers = InnerSolvers(sys0, n=problem.mesh.n)
        y = reduced_misfit_hessian_matvec(sys0, solvers, rng.standard_normal(sys.n_rho))
        np.testing.assert_allclose(y, 0.0, atol=1e-14)

    def test_symmetry_on_probes(self, snapshot4, rng):
        problem, _, sys = snapshot4
        solvers = InnerSolvers(sys, n=problem.mesh.n)
        x, y = rng.standard_normal(sys.n_rho), rng.standard_normal(sys.n_rho)
        s1 = y @ reduced_misfit_hessian_matvec(sys, solvers, x)
        s2 = x @ reduced_misfit_hessian_matvec(sys, solvers, y)
        assert abs(s1 - s2) <= 1e-9 * max(abs(s1), 1e-12)

    def test_matches_dense_composition(self, snapshot4, rng):
        problem, _, sys = snapshot4
        solvers = InnerSolvers(sys, n=problem.mesh.n)
        t = np.linalg.solve(sys.Ju.toarray(), sys.Jrho.toarray())
        hd = t.T @ sys.H_uu.toarray() @ t
        x = rng.standard_normal(sys.n_rho)
        np.testing.assert_allclose(
            reduced_misfit_hessian_matvec(sys, solvers, x), hd @ x, atol=1e-10
        )

    def test_exactly_two_inner_solves_per_matvec(self, snapshot4, rng):
        problem, _, sys = snapshot4
        solvers = InnerSolvers(sys, n=problem.mesh.n)
        before = solvers.total_solves
        reduced_misfit_hessian_matvec(sys, solvers, rng.standard_normal(sys.n_rho))
        assert solvers.total_solves - before == 2


class TestReducedCg:
    def test_pure_parameter_rhs_one_iteration(self, snapshot4, rng):
        import dataclasses

        problem, _, sys = snapshot4
        sys0 = dataclasses.replace(
            sys,
            H_uu=sp.csr_matrix(sys.H_uu.shape),
            b_u=np.zeros(sys.n_u),
            b_lam=np.zeros(sys.n_u),
        )
        solvers = InnerSolvers(sys0, n=problem.mesh.n)
        direction, report = solve_reduced_cg(sys0, solvers, rel_tol=1e-8)
        assert report.iterations == 1
        np.testing.assert_allclose(
            direction.rho, np.linalg.solve(sys.W.toarray(), sys0.b_rho), rtol=1e-8
        )

    def test_paths_agree(self, snapshot8):
        problem, _, sys = snapshot8
        s1 = InnerSolvers(sys, n=problem.mesh.n)
        d_gmres, _ = solve_fullspace_gmres(sys, s1, rel_tol=1e-8)
        s2 = InnerSolvers(sys, n=problem.mesh.n)
        d_cg, _ = solve_reduced_cg(sys, s2, rel_tol=1e-8)
        x1 = np.concatenate([d_gmres.u, d_gmres.rho, d_gmres.lam])
        x2 = np.concatenate([d_cg.u, d_cg.rho, d_cg.lam])
        assert np.linalg.norm(x1 - x2) <= 1e-6 * np.linalg.norm(x1)


class TestConstraintPath:
    def test_never_more_iterations_than_block_gs(self):
        # same non-unit spectrum without the unit-cluster perturbations
        problem = ModelProblem(8, ProblemConfig(seed=0))
        _, gs = outer_loop(problem, IpmConfig(solver="gmres-blockgs"))
        _, con = outer_loop(problem, IpmConfig(solver="gmres-constraint"))
        m = min(gs.n_solves, con.n_solves)
        assert all(c <= g for c, g in zip(con.krylov_iters()[:m], gs.krylov_iters()[:m]))
        assert con.mean_krylov_iters() <= gs.mean_krylov_iters()


class TestBacksub:
    def test_centered_zero_direction(self, problem8):
        state = initial_state(problem8, IpmConfig())
        gap = state.rho - problem8.rho_lower
        zhat = backsub_zhat(gap, state.z, state.mu, np.zeros(problem8.n_nodes))
        np.testing.assert_allclose(zhat, 0.0, atol=1e-16)

    def test_fourth_row_identity(self, snapshot4, rng):
        _, state, sys = snapshot4
        rho_hat = rng.standard_normal(sys.n_rho)
        zhat = backsub_zhat(sys.gap, sys.z, sys.mu, rho_hat)
        r_z = sys.z * sys.gap - sys.mu
        residual = sys.z * rho_hat + sys.gap * zhat + r_z
        np.testing.assert_allclose(residual, 0.0, atol=1e-14)

    def test_dense_unreduced_system_oracle(self, snapshot4):
        # the eliminated four-block system, solved densely, matches the reduced
        # solve plus back-substitution
        problem, state, sys = snapshot4
        nu, nr = sys.n_u, sys.n_rho
        n4 = 2 * nu + 2 * nr
        a4 = np.zeros((n4, n4))
        a4[:nu, :nu] = sys.H_uu.toarray()
        a4[:nu, nu + nr : 2 * nu + nr] = sys.Ju.T.toarray()
        a4[nu : nu + nr, nu : nu + nr] = problem.H_rr.toarray()
        a4[nu : nu + nr, nu + nr : 2 * nu + nr] = sys.Jrho.T.toarray()
        a4[nu : nu + nr, 2 * nu + nr :] = -np.diag(problem.ML)
        a4[nu + nr : 2 * nu + nr, :nu] = sys.Ju.toarray()
        a4[nu + nr : 2 * nu + nr, nu : nu + nr] = sys.Jrho.toarray()
        a4[2 * nu + nr :, nu : nu + nr] = np.diag(sys.z)
        a4[2 * nu + nr :, 2 * nu + nr :] = np.diag(sys.gap)
        ops = problem.linearize(state.u, state.rho)
        r_u = ops.grad_u + ops.Ju.T @ state.lam
        r_rho = ops.grad_rho + ops.Jrho.T @ state.lam - problem.ML * state.z
        r_z = sys.z * sys.gap - sys.mu
        rhs4 = -np.concatenate([r_u, r_rho, ops.c, r_z])
        x4 = np.linalg.solve(a4, rhs4)

        solvers = InnerSolvers(sys, n=problem.mesh.n)
        direction, _ = solve_fullspace_gmres(sys, solvers, rel_tol=1e-12, max_it=300)
        zhat = backsub_zhat(sys.gap, sys.z, sys.mu, direction.rho)
        got = np.concatenate([direction.u, direction.rho, direction.lam, zhat])
        assert np.linalg.norm(got - x4) <= 1e-9 * max(np.linalg.norm(x4), 1.0)
