import numpy as np
import pytest

from adp.hypergradient import (
    NegativeCurvatureError,
    WarmState,
    cg_solve,
    inexact_hypergradient,
    mixed_second_transpose,
    sobolev_grad,
    sobolev_value,
    upper_fit_grad,
)
from adp.lower_solvers import LowerProblem, lower_grad
from adp.operators import DENSE1D, DEPTHWISE2D, ConvOperator, DenseOperator, Kernel
from adp.problems import UpperProblem
from adp.regularizers import SmoothedElasticNet


def random_spd(n, rng):
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


def quadratic_bilevel(n, seed, alpha=1.0):
    """Dense quadratic bilevel instance with a closed-form hypergradient."""
    rng = np.random.default_rng(seed)
    A = DenseOperator(rng.standard_normal((n, n)) / np.sqrt(n) + np.eye(n))
    B = rng.standard_normal((n, n)) / np.sqrt(n) + np.eye(n)
    y_delta = rng.standard_normal(n)
    b0 = Kernel(B, DENSE1D)
    return UpperProblem(
        name="quadratic",
        A=A,
        a=b0,
        y_delta=y_delta,
        beta=0.0,
        alpha=alpha,
        reg=SmoothedElasticNet(0.0, 1.0, 1e-4),
        b0=b0,
        x0=np.zeros(n),
        mu_floor=1e-12,
        lower_method="agd",
        lower_max_iters=50000,
    )


def exact_hypergradient(upper, b):
    """Explicit-inverse IFT oracle for the quadratic instance."""
    B = b.data
    n = B.shape[0]
    alpha = upper.alpha
    x_hat = np.linalg.solve(B.T @ B + alpha * upper.reg.l2 * np.eye(n), B.T @ upper.y_delta)
    hess = 2.0 * B.T @ B + 2.0 * alpha * upper.reg.l2 * np.eye(n)
    rhs = 2.0 * upper.A.matrix.T @ (upper.A.matrix @ x_hat - upper.y_delta)
    q = np.linalg.solve(hess, rhs)
    resid = B @ x_hat - upper.y_delta
    return -2.0 * (np.outer(resid, q) + np.outer(B @ q, x_hat))


class TestCGSolve:
    def test_identity_one_iteration(self):
        rhs = np.array([1.0, -2.0, 3.0])
        res = cg_solve(lambda v: v, rhs, tol=1e-12)
        assert res.iters == 1
        np.testing.assert_allclose(res.q, rhs)

    def test_diagonal_exact(self):
        h = np.diag([1.0, 2.0, 4.0])
        res = cg_solve(lambda v: h @ v, np.ones(3), tol=1e-12)
        np.testing.assert_allclose(res.q, [1.0, 0.5, 0.25], atol=1e-12)
        assert res.converged

    @pytest.mark.parametrize("seed", range(5))
    def test_random_spd_matches_direct(self, seed):
        rng = np.random.default_rng(seed)
        h = random_spd(20, rng)
        rhs = rng.standard_normal(20)
        tol = 1e-10
        res = cg_solve(lambda v: h @ v, rhs, tol=tol, max_iters=500)
        direct = np.linalg.solve(h, rhs)
        assert np.linalg.norm(res.q - direct) <= 10 * tol / np.linalg.eigvalsh(h).min()
        assert res.residual <= tol

    def test_residual_contract_many_systems(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = rng.integers(3, 15)
            h = random_spd(n, rng)
            rhs = rng.standard_normal(n)
            tol = 10.0 ** rng.uniform(-10, -4)
            res = cg_solve(lambda v: h @ v, rhs, tol=tol, max_iters=1000)
            if res.converged:
                assert res.residual <= tol
            assert res.residual == pytest.approx(np.linalg.norm(h @ res.q - rhs))

    def test_negative_curvature_raises(self):
        h = np.diag([1.0, -1.0])
        with pytest.raises(NegativeCurvatureError, match="strong convexity"):
            cg_solve(lambda v: h @ v, np.ones(2), tol=1e-10)

    def test_warm_start_at_solution(self):
        rng = np.random.default_rng(7)
        h = random_spd(8, rng)
        rhs = rng.standard_normal(8)
        x = np.linalg.solve(h, rhs)
        res = cg_solve(lambda v: h @ v, rhs, tol=1e-8, x0=x)
        assert res.iters == 0
        np.testing.assert_allclose(res.q, x)

    def test_not_converged_flagged(self):
        rng = np.random.default_rng(8)
        h = random_spd(30, rng)
        res = cg_solve(lambda v: h @ v, rng.standard_normal(30), tol=1e-14, max_iters=2)
        assert not res.converged


class TestUpperFitGrad:
    def test_zero_at_fit(self):
        rng = np.random.default_rng(0)
        A = DenseOperator(rng.standard_normal((5, 5)))
        x = rng.standard_normal(5)
        np.testing.assert_allclose(upper_fit_grad(x, A, A.apply(x)), 0.0, atol=1e-12)

    def test_identity_operator(self):
        A = DenseOperator(np.eye(4))
        x = np.array([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_allclose(upper_fit_grad(x, A, np.zeros(4)), 2 * x)

    def test_matches_fd(self):
        rng = np.random.default_rng(1)
        A = DenseOperator(rng.standard_normal((6, 6)))
        y = rng.standard_normal(6)
        x = rng.standard_normal(6)
        g = upper_fit_grad(x, A, y)
        step = 1e-6

        def f(z):
            r = A.apply(z) - y
            return np.sum(r * r)

        for i in range(6):
            e = np.zeros(6)
            e[i] = step
            fd = (f(x + e) - f(x - e)) / (2 * step)
            assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)


class TestMixedSecondTranspose:
    def test_zero_q(self):
        upper = quadratic_bilevel(5, 0)
        p = upper.lower_problem(upper.b0)
        out = mixed_second_transpose(np.ones(5), upper.b0, np.zeros(5), p)
        np.testing.assert_allclose(out, 0.0)

    def test_dense_matches_fd(self):
        rng = np.random.default_rng(2)
        n = 5
        upper = quadratic_bilevel(n, 2)
        b = upper.b0
        x_tilde = rng.standard_normal(n)
        q = rng.standard_normal(n)
        p = upper.lower_problem(b)
        out = mixed_second_transpose(x_tilde, b, q, p)
        step = 1e-6
        for i in range(n):
            for j in range(n):
                e = np.zeros((n, n))
                e[i, j] = step
                p_plus = upper.lower_problem(b.with_data(b.data + e))
                p_minus = upper.lower_problem(b.with_data(b.data - e))
                fd = (
                    np.vdot(lower_grad(p_plus, x_tilde), q)
                    - np.vdot(lower_grad(p_minus, x_tilde), q)
                ) / (2 * step)
                assert out[i, j] == pytest.approx(fd, abs=1e-5)

    def test_depthwise_matches_fd(self):
        rng = np.random.default_rng(3)
        shape = (8, 8, 1)
        b = Kernel(rng.standard_normal((3, 3, 1)) / 3, DEPTHWISE2D)
        y = rng.random(shape)
        from adp.regularizers import SmoothedTV

        x_tilde = rng.random(shape)
        q = rng.standard_normal(shape)
        reg = SmoothedTV(1e-2)
        p = LowerProblem(ConvOperator(b, shape), y, 0.4, reg)
        out = mixed_second_transpose(x_tilde, b, q, p)
        step = 1e-6
        for i in range(3):
            for j in range(3):
                e = np.zeros((3, 3, 1))
                e[i, j, 0] = step
                p_plus = LowerProblem(ConvOperator(b.with_data(b.data + e), shape), y, 0.4, reg)
                p_minus = LowerProblem(ConvOperator(b.with_data(b.data - e), shape), y, 0.4, reg)
                fd = (
                    np.vdot(lower_grad(p_plus, x_tilde), q)
                    - np.vdot(lower_grad(p_minus, x_tilde), q)
                ) / (2 * step)
                assert out[i, j, 0] == pytest.approx(fd, abs=1e-5)


class TestSobolev:
    def test_zero_at_anchor(self):
        rng = np.random.default_rng(4)
        a = Kernel(rng.standard_normal((3, 3, 2)), DEPTHWISE2D)
        np.testing.assert_allclose(sobolev_grad(a, a, 0.7), 0.0)
        assert sobolev_value(a, a, 0.7) == 0.0

    def test_zero_beta(self):
        rng = np.random.default_rng(5)
        b = Kernel(rng.standard_normal((3, 3, 1)), DEPTHWISE2D)
        a = Kernel(rng.standard_normal((3, 3, 1)), DEPTHWISE2D)
        np.testing.assert_allclose(sobolev_grad(b, a, 0.0), 0.0)

    def test_matches_fd(self):
        rng = np.random.default_rng(6)
        b = Kernel(rng.standard_normal((3, 3, 1)), DEPTHWISE2D)
        a = Kernel(rng.standard_normal((3, 3, 1)), DEPTHWISE2D)
        beta = 0.37
        g = sobolev_grad(b, a, beta)
        step = 1e-6
        for i in range(3):
            for j in range(3):
                e = np.zeros((3, 3, 1))
                e[i, j, 0] = step
                fd = (
                    sobolev_value(b.with_data(b.data + e), a, beta)
                    - sobolev_value(b.with_data(b.data - e), a, beta)
                ) / (2 * step)
                assert g[i, j, 0] == pytest.approx(fd, rel=1e-6, abs=1e-6)

    def test_shape_mismatch(self):
        b = Kernel(np.zeros((3, 3, 1)), DEPTHWISE2D)
        a = Kernel(np.zeros((5, 5, 1)), DEPTHWISE2D)
        with pytest.raises(ValueError):
            sobolev_grad(b, a, 1.0)


class TestInexactHypergradient:
    def test_matches_dense_oracle_at_tight_accuracy(self):
        upper = quadratic_bilevel(6, 10)
        z_exact = exact_hypergradient(upper, upper.b0)
        state = WarmState(x=upper.x0.copy())
        res = inexact_hypergradient(upper, upper.b0, 1e-10, 1e-10, state, cg_max_iters=1000)
        rel = np.linalg.norm(res.z - z_exact) / np.linalg.norm(z_exact)
        assert rel <= 1e-6
        assert res.lower_converged and res.cg_converged
        assert res.cg_residual <= 1e-10

    def test_error_decay_with_accuracy(self):
        upper = quadratic_bilevel(6, 11)
        z_exact = exact_hypergradient(upper, upper.b0)
        errs = []
        for exp in range(2, 11, 2):
            tol = 10.0 ** (-exp)
            state = WarmState(x=upper.x0.copy())
            res = inexact_hypergradient(upper, upper.b0, tol, tol, state, cg_max_iters=1000)
            errs.append(np.linalg.norm(res.z - z_exact))
        for e1, e2 in zip(errs, errs[1:]):
            assert e2 <= e1 + 1e-12

    def test_sobolev_term_vanishes_at_anchor(self):
        # b = a: z is the fit-term hypergradient alone even with beta > 0
        upper = quadratic_bilevel(5, 12)
        upper.beta = 0.9
        state = WarmState(x=upper.x0.copy())
        res = inexact_hypergradient(upper, upper.a, 1e-10, 1e-10, state, cg_max_iters=1000)
        z_exact = exact_hypergradient(upper, upper.a)
        assert np.linalg.norm(res.z - z_exact) / np.linalg.norm(z_exact) <= 1e-6

    def test_achieved_accuracies_reported(self):
        upper = quadratic_bilevel(6, 13)
        state = WarmState(x=upper.x0.copy())
        res = inexact_hypergradient(upper, upper.b0, 1e-4, 1e-5, state)
        assert 0 < res.epsilon_used <= 1e-4
        assert res.delta_used == 1e-5
        assert res.cg_residual <= 1e-5

    def test_rejects_bad_tolerances(self):
        upper = quadratic_bilevel(4, 14)
        state = WarmState(x=upper.x0.copy())
        with pytest.raises(ValueError):
            inexact_hypergradient(upper, upper.b0, 0.0, 1e-5, state)
        with pytest.raises(ValueError):
            inexact_hypergradient(upper, upper.b0, 1e-5, -1.0, state)
