import numpy as np
import pytest
import scipy.sparse as sp

from ipgn.errors import ConfigurationError, IndefiniteOperatorError
from ipgn.sparsela import (
    as_apply,
    cg_solve,
    gmres_solve,
    read_matrix_market,
    spmv,
    write_matrix_market,
)


class TestSpmv:
    def test_identity(self, rng):
        x = rng.standard_normal(7)
        np.testing.assert_allclose(spmv(sp.identity(7, format="csr"), x), x)

    def test_zero(self):
        np.testing.assert_allclose(spmv(sp.csr_matrix((4, 4)), np.ones(4)), 0.0)

    def test_matches_dense_product(self, rng):
        dense = rng.standard_normal((5, 5))
        x = rng.standard_normal(5)
        np.testing.assert_allclose(spmv(sp.csr_matrix(dense), x), dense @ x, atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            spmv(sp.identity(3, format="csr"), np.ones(4))


class TestOperatorWrapper:
    def test_linearity_on_random_probes(self, rng):
        mat = sp.csr_matrix(rng.standard_normal((8, 8)))
        apply_ = as_apply(mat)
        for _ in range(5):
            x, y = rng.standard_normal(8), rng.standard_normal(8)
            a, b = rng.standard_normal(2)
            lhs = apply_(a * x + b * y)
            rhs = a * apply_(x) + b * apply_(y)
            assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(rhs))

    def test_none_is_identity(self, rng):
        x = rng.standard_normal(4)
        np.testing.assert_allclose(as_apply(None)(x), x)


class TestCg:
    def test_identity_converges_in_one(self):
        x, report = cg_solve(np.eye(3), None, np.array([1.0, 2.0, 3.0]), 1e-12, 10)
        assert report.iterations == 1 and report.converged
        np.testing.assert_allclose(x, [1, 2, 3])

    def test_two_distinct_eigenvalues_two_iterations(self):
        x, report = cg_solve(np.diag([1.0, 4.0]), None, np.array([1.0, 1.0]), 1e-13, 10)
        assert report.iterations <= 2
        np.testing.assert_allclose(x, [1.0, 0.25], atol=1e-12)

    def test_random_spd_matches_dense_oracle(self, rng):
        g = rng.standard_normal((10, 10))
        a = g @ g.T + 10 * np.eye(10)
        b = rng.standard_normal(10)
        x, report = cg_solve(a, None, b, 1e-12, 100)
        expected = np.linalg.solve(a, b)
        assert np.linalg.norm(x - expected) <= 1e-10 * np.linalg.norm(expected)
        assert len(report.history) == report.iterations + 1

    def test_monitored_norm_is_preconditioner_weighted(self, rng):
        # with preconditioner B^-1 the tracked scalar is sqrt(r' B^-1 r)
        g = rng.standard_normal((6, 6))
        a = g @ g.T + 6 * np.eye(6)
        dinv = 1.0 / np.diag(a)
        b = rng.standard_normal(6)
        _, report = cg_solve(a, lambda r: dinv * r, b, rel_tol=0.0, max_it=1)
        assert report.history[0] == pytest.approx(np.sqrt(b @ (dinv * b)))

    def test_indefiniteness_error_carries_iterate(self, rng):
        a = np.diag([1.0, -1.0])
        with pytest.raises(IndefiniteOperatorError) as err:
            cg_solve(a, None, np.array([1.0, 1.0]), 1e-12, 10)
        assert err.value.iterate is not None

    def test_max_it_reports_nonconverged(self, rng):
        g = rng.standard_normal((30, 30))
        a = g @ g.T + 0.1 * np.eye(30)
        _, report = cg_solve(a, None, rng.standard_normal(30), 1e-14, 2)
        assert not report.converged and report.iterations == 2

    def test_a_norm_error_nonincreasing(self, rng):
        g = rng.standard_normal((12, 12))
        a = g @ g.T + 2 * np.eye(12)
        b = rng.standard_normal(12)
        exact = np.linalg.solve(a, b)
        errors = []
        for k in range(1, 8):
            x, _ = cg_solve(a, None, b, 0.0, k)
            e = x - exact
            errors.append(np.sqrt(e @ (a @ e)))
        assert all(e2 <= e1 * (1 + 1e-12) for e1, e2 in zip(errors, errors[1:]))


class TestGmres:
    def test_identity_one_iteration(self, rng):
        b = rng.standard_normal(5)
        x, report = gmres_solve(np.eye(5), None, b, 1e-10, 20)
        assert report.iterations == 1 and report.converged
        np.testing.assert_allclose(x, b, atol=1e-12)

    def test_minimum_polynomial_degree_two(self, rng):
        a = np.eye(10) + 0.3 * np.outer(rng.standard_normal(10), rng.standard_normal(10))
        _, report = gmres_solve(a, None, rng.standard_normal(10), 1e-10, 20)
        assert report.iterations <= 2 and report.converged

    def test_random_matches_dense_oracle(self, rng):
        a = rng.standard_normal((20, 20)) + 5 * np.eye(20)
        b = rng.standard_normal(20)
        x, report = gmres_solve(a, None, b, 1e-12, 40)
        expected = np.linalg.solve(a, b)
        assert np.linalg.norm(x - expected) <= 1e-10 * np.linalg.norm(expected)

    def test_history_monotone(self, rng):
        a = rng.standard_normal((25, 25)) + 6 * np.eye(25)
        _, report = gmres_solve(a, None, rng.standard_normal(25), 1e-13, 25)
        assert np.all(np.diff(report.history) <= 1e-13 * report.history[0])

    def test_left_preconditioned_monitor(self, rng):
        a = rng.standard_normal((8, 8)) + 4 * np.eye(8)
        m = np.linalg.inv(a + 0.1 * rng.standard_normal((8, 8)))
        b = rng.standard_normal(8)
        _, report = gmres_solve(a, lambda v: m @ v, b, 1e-13, 20)
        assert report.history[0] == pytest.approx(np.linalg.norm(m @ b))

    def test_restart_still_converges(self, rng):
        a = rng.standard_normal((30, 30)) + 8 * np.eye(30)
        b = rng.standard_normal(30)
        x, report = gmres_solve(a, None, b, 1e-10, 200, restart=5)
        expected = np.linalg.solve(a, b)
        assert report.converged
        assert np.linalg.norm(x - expected) <= 1e-8 * np.linalg.norm(expected)

    def test_max_it_nonconverged(self, rng):
        a = rng.standard_normal((40, 40)) + 2 * np.eye(40)
        _, report = gmres_solve(a, None, rng.standard_normal(40), 1e-14, 3)
        assert not report.converged and report.iterations == 3


class TestMatrixMarket:
    def test_round_trip(self, tmp_path, rng):
        a = sp.random(12, 12, density=0.3, random_state=np.random.RandomState(0)).tocsr()
        path = tmp_path / "mat.mtx"
        write_matrix_market(path, a)
        back = read_matrix_market(path)
        assert (a != back).nnz == 0
        assert back.has_sorted_indices
