import numpy as np
import pytest

from adp.baselines import (
    BaselineConfig,
    prox_grad_iterations,
    run_ift,
    run_unrolled,
    unrolled_gradient,
)
from adp.hypergradient import sobolev_grad
from adp.maid import MAIDConfig, maid_run
from adp.operators import DENSE1D, DenseOperator, Kernel
from adp.problems import UpperProblem
from adp.regularizers import SmoothedElasticNet

from test_hypergradient import exact_hypergradient, quadratic_bilevel
from test_maid import scalar_bilevel


class TestConfig:
    def test_rejects_unknown_method(self):
        with pytest.raises(ValueError):
            BaselineConfig(method="autodiff")

    def test_rejects_negative_iters(self):
        with pytest.raises(ValueError):
            BaselineConfig(lower_iters=-1)


class TestProxGradIterations:
    def test_solves_quadratic(self):
        upper = quadratic_bilevel(6, 0)
        p = upper.lower_problem(upper.b0)
        x = prox_grad_iterations(p.op, p.y, p.alpha, 0.0, 1.0, np.zeros(6), 3000, 0.1)
        m = upper.b0.data
        x_hat = np.linalg.solve(m.T @ m + np.eye(6), m.T @ upper.y_delta)
        np.testing.assert_allclose(x, x_hat, atol=1e-10)

    def test_soft_threshold_active(self):
        # with a huge l1 weight everything is thresholded to zero
        upper = quadratic_bilevel(4, 1)
        p = upper.lower_problem(upper.b0)
        x = prox_grad_iterations(p.op, p.y, p.alpha, 1e3, 1.0, np.zeros(4), 50, 0.1)
        np.testing.assert_allclose(x, 0.0)


class TestRunIFT:
    def test_zero_upper_iters_returns_b0(self):
        upper = quadratic_bilevel(5, 2)
        cfg = BaselineConfig(method="ift", lower_iters=100, upper_iters=0)
        b, x, trace = run_ift(upper, cfg)
        np.testing.assert_array_equal(b.data, upper.b0.data)
        assert len(trace) == 0

    def test_exact_lower_solve_gives_oracle_hypergradient(self):
        upper = quadratic_bilevel(6, 3)
        cfg = BaselineConfig(method="ift", lower_iters=4000, upper_iters=1,
                             upper_step=0.1, cg_tol=1e-12, cg_max_iters=1000)
        b, _, _ = run_ift(upper, cfg)
        z_recovered = (upper.b0.data - b.data) / cfg.upper_step
        z_exact = exact_hypergradient(upper, upper.b0)
        assert np.linalg.norm(z_recovered - z_exact) / np.linalg.norm(z_exact) <= 1e-6

    def test_converges_to_same_stationary_point_as_maid(self):
        upper = scalar_bilevel(b0=1.2)
        cfg = BaselineConfig(method="ift", lower_iters=300, upper_iters=4000,
                             upper_step=0.1)
        b_ift, _, _ = run_ift(upper, cfg)
        b_maid, _, _ = maid_run(scalar_bilevel(b0=1.2),
                                MAIDConfig(eps_stop=1e-9, max_upper_iters=400))
        assert abs(float(b_ift.data[0, 0]) - 2.0) <= 1e-3
        assert abs(float(b_maid.data[0, 0]) - 2.0) <= 1e-3

    def test_trace_budget_accounting(self):
        upper = quadratic_bilevel(5, 4)
        cfg = BaselineConfig(method="ift", lower_iters=50, upper_iters=3)
        _, _, trace = run_ift(upper, cfg)
        assert trace.lower_iters_cum == [50, 100, 150]

    def test_method_mismatch(self):
        with pytest.raises(ValueError):
            run_ift(quadratic_bilevel(4, 5), BaselineConfig(method="unrolled"))


class TestUnrolledGradient:
    def test_zero_iterations_gives_sobolev_gradient_only(self):
        upper = quadratic_bilevel(5, 6)
        upper.beta = 0.7
        rng = np.random.default_rng(0)
        b = Kernel(rng.standard_normal((5, 5)), DENSE1D)
        g, x = unrolled_gradient(upper, b, upper.x0, 0, 0.1)
        np.testing.assert_allclose(g, sobolev_grad(b, upper.a, upper.beta))
        np.testing.assert_array_equal(x, upper.x0)

    def test_matches_fd_of_truncated_objective_quadratic(self):
        # quadratic J (thresholds zero): reverse mode vs central FD through
        # the L-step map
        upper = quadratic_bilevel(4, 7)
        L, step = 5, 0.1
        g, _ = unrolled_gradient(upper, upper.b0, upper.x0, L, step)

        def truncated_loss(bdata):
            bk = Kernel(bdata, DENSE1D)
            p = upper.lower_problem(bk)
            x = prox_grad_iterations(p.op, p.y, p.alpha, 0.0, upper.reg.l2,
                                     upper.x0, L, step)
            return upper.loss(x, bk)

        h = 1e-6
        for i in range(4):
            for j in range(4):
                e = np.zeros((4, 4))
                e[i, j] = h
                fd = (truncated_loss(upper.b0.data + e)
                      - truncated_loss(upper.b0.data - e)) / (2 * h)
                assert g[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-7)

    def test_matches_fd_with_active_threshold(self):
        # elastic net with l1 > 0: reverse mode through the soft threshold
        rng = np.random.default_rng(8)
        n = 4
        B = rng.standard_normal((n, n)) / np.sqrt(n) + np.eye(n)
        b0 = Kernel(B, DENSE1D)
        upper = UpperProblem(
            name="en", A=DenseOperator(rng.standard_normal((n, n))),
            a=b0, y_delta=rng.standard_normal(n), beta=0.0, alpha=1.0,
            reg=SmoothedElasticNet(0.05, 0.5, 0.0), b0=b0, x0=np.zeros(n),
        )
        L, step = 8, 0.1
        g, _ = unrolled_gradient(upper, b0, upper.x0, L, step)

        def truncated_loss(bdata):
            bk = Kernel(bdata, DENSE1D)
            p = upper.lower_problem(bk)
            x = prox_grad_iterations(p.op, p.y, p.alpha, upper.reg.l1, upper.reg.l2,
                                     upper.x0, L, step)
            return upper.loss(x, bk)

        h = 1e-7
        for i in range(n):
            for j in range(n):
                e = np.zeros((n, n))
                e[i, j] = h
                fd = (truncated_loss(b0.data + e) - truncated_loss(b0.data - e)) / (2 * h)
                assert g[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-6)

    def test_approaches_ift_oracle_with_depth(self):
        upper = quadratic_bilevel(6, 9)
        z_exact = exact_hypergradient(upper, upper.b0)
        gaps = []
        for L in [10, 50, 200]:
            g, _ = unrolled_gradient(upper, upper.b0, upper.x0, L, 0.1)
            gaps.append(np.linalg.norm(g - z_exact))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_memory_cap(self):
        upper = quadratic_bilevel(5, 10)
        with pytest.raises(MemoryError, match="lower_iters"):
            unrolled_gradient(upper, upper.b0, upper.x0, 100, 0.1,
                              memory_cap_bytes=1000)


class TestRunUnrolled:
    def test_smoke_and_budget(self):
        upper = quadratic_bilevel(5, 11)
        cfg = BaselineConfig(method="unrolled", lower_iters=20, upper_iters=4)
        b, x, trace = run_unrolled(upper, cfg)
        assert len(trace) == 4
        assert trace.lower_iters_cum == [20, 40, 60, 80]
        assert np.isfinite(trace.final_loss)

    def test_loss_decreases_on_easy_instance(self):
        upper = scalar_bilevel(b0=1.2)
        cfg = BaselineConfig(method="unrolled", lower_iters=50, upper_iters=200,
                             upper_step=0.1)
        _, _, trace = run_unrolled(upper, cfg)
        assert trace.loss[-1] < trace.loss[0]

    def test_method_mismatch(self):
        with pytest.raises(ValueError):
            run_unrolled(quadratic_bilevel(4, 12), BaselineConfig(method="ift"))
