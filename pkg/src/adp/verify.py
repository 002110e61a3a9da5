"""Oracle and property suites: finite-difference derivative checks, the
explicit-inverse hypergradient oracle, the a-posteriori distance bound and
the sufficient-decrease re-check.  Exposed through the CLI ``verify``
subcommand and reused by the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import prox_grad_iterations, unrolled_gradient
from .hypergradient import (
    WarmState,
    cg_solve,
    inexact_hypergradient,
    mixed_second_transpose,
    sobolev_grad,
    sobolev_value,
)
from .lower_solvers import LowerProblem, lower_grad, lower_value, mu_of_b, solve_lower
from .maid import MAIDConfig, maid_run
from .operators import DENSE1D, DEPTHWISE2D, ConvOperator, DenseOperator, Kernel
from .problems import UpperProblem, build_deconv1d
from .regularizers import SmoothedElasticNet, SmoothedTV


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: list = field(default_factory=list)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: " + "; ".join(self.details)


def quadratic_bilevel_instance(n: int, seed: int) -> UpperProblem:
    """Dense quadratic bilevel instance (J = ||x||^2 via elastic net with
    l1 = 0) whose hypergradient has a closed form."""
    rng = np.random.default_rng(seed)
    A = DenseOperator(rng.standard_normal((n, n)) / np.sqrt(n) + np.eye(n))
    B = rng.standard_normal((n, n)) / np.sqrt(n) + np.eye(n)
    b0 = Kernel(B, DENSE1D)
    return UpperProblem(
        name="quadratic",
        A=A,
        a=b0,
        y_delta=rng.standard_normal(n),
        beta=0.0,
        alpha=1.0,
        reg=SmoothedElasticNet(0.0, 1.0, 1e-4),
        b0=b0,
        x0=np.zeros(n),
        mu_floor=1e-12,
        lower_max_iters=100000,
    )


def dense_ift_oracle(upper: UpperProblem, b: Kernel) -> np.ndarray:
    """Exact hypergradient by explicit matrix inversion (independent of the
    CG/iterative path)."""
    B = b.data
    n = B.shape[0]
    l2 = upper.alpha * upper.reg.l2
    x_hat = np.linalg.solve(B.T @ B + l2 * np.eye(n), B.T @ upper.y_delta)
    hess = 2.0 * B.T @ B + 2.0 * l2 * np.eye(n)
    rhs = 2.0 * upper.A.matrix.T @ (upper.A.matrix @ x_hat - upper.y_delta)
    q = np.linalg.solve(hess, rhs)
    resid = B @ x_hat - upper.y_delta
    return -2.0 * (np.outer(resid, q) + np.outer(B @ q, x_hat))


def _rel_err(approx, exact):
    denom = max(np.linalg.norm(np.asarray(exact).ravel()), 1e-300)
    return float(np.linalg.norm((np.asarray(approx) - np.asarray(exact)).ravel()) / denom)


def fd_suite(seed: int = 0, mutate: str | None = None) -> SuiteResult:
    """Central finite differences against every analytic derivative."""
    rng = np.random.default_rng(seed)
    details = []
    ok = True

    def check(name, err, tol):
        nonlocal ok
        passed = err <= tol
        ok = ok and passed
        details.append(f"{name} rel err {err:.2e} (tol {tol:.0e})")
        return passed

    mst = mixed_second_transpose
    if mutate == "mixed_second_transpose":
        mst = lambda *args: -mixed_second_transpose(*args)  # noqa: E731

    # regularizer gradients, 20 random points each
    for reg, shape, label in [
        (SmoothedElasticNet(0.05, 0.02, 1e-3), (5, 5), "reg_grad[elastic]"),
        (SmoothedTV(1e-2), (5, 5, 1), "reg_grad[tv]"),
    ]:
        worst = 0.0
        for _ in range(20):
            x = rng.standard_normal(shape)
            g = reg.grad(x)
            fd = np.zeros_like(x)
            step = 1e-6
            it = np.nditer(x, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                xp, xm = x.copy(), x.copy()
                xp[idx] += step
                xm[idx] -= step
                fd[idx] = (reg.value(xp) - reg.value(xm)) / (2 * step)
                it.iternext()
            worst = max(worst, _rel_err(g, fd))
        check(label, worst, 1e-5)

    # lower-level gradient
    worst = 0.0
    for trial in range(5):
        n = 6
        p = LowerProblem(DenseOperator(rng.standard_normal((n, n))),
                         rng.standard_normal(n), 0.7,
                         SmoothedElasticNet(0.05, 0.3, 1e-3))
        x = rng.standard_normal(n)
        g = lower_grad(p, x)
        fd = np.zeros(n)
        step = 1e-6
        for i in range(n):
            e = np.zeros(n)
            e[i] = step
            fd[i] = (lower_value(p, x + e) - lower_value(p, x - e)) / (2 * step)
        worst = max(worst, _rel_err(g, fd))
    check("lower_grad", worst, 1e-6)

    # mixed second derivative transpose, dense and depthwise
    upper = quadratic_bilevel_instance(5, seed + 1)
    b = upper.b0
    x_tilde = rng.standard_normal(5)
    q = rng.standard_normal(5)
    p = upper.lower_problem(b)
    out = mst(x_tilde, b, q, p)
    fd = np.zeros((5, 5))
    step = 1e-6
    for i in range(5):
        for j in range(5):
            e = np.zeros((5, 5))
            e[i, j] = step
            fd[i, j] = (
                np.vdot(lower_grad(upper.lower_problem(b.with_data(b.data + e)), x_tilde), q)
                - np.vdot(lower_grad(upper.lower_problem(b.with_data(b.data - e)), x_tilde), q)
            ) / (2 * step)
    check("mixed_second_transpose[dense]", _rel_err(out, fd), 1e-5)

    shape = (8, 8, 1)
    bk = Kernel(rng.standard_normal((3, 3, 1)) / 3, DEPTHWISE2D)
    reg = SmoothedTV(1e-2)
    y2 = rng.random(shape)
    x2 = rng.random(shape)
    q2 = rng.standard_normal(shape)
    p2 = LowerProblem(ConvOperator(bk, shape), y2, 0.4, reg)
    out2 = mst(x2, bk, q2, p2)
    fd2 = np.zeros((3, 3, 1))
    for i in range(3):
        for j in range(3):
            e = np.zeros((3, 3, 1))
            e[i, j, 0] = step
            pp = LowerProblem(ConvOperator(bk.with_data(bk.data + e), shape), y2, 0.4, reg)
            pm = LowerProblem(ConvOperator(bk.with_data(bk.data - e), shape), y2, 0.4, reg)
            fd2[i, j, 0] = (np.vdot(lower_grad(pp, x2), q2)
                            - np.vdot(lower_grad(pm, x2), q2)) / (2 * step)
    check("mixed_second_transpose[depthwise]", _rel_err(out2, fd2), 1e-5)

    # Sobolev anchor gradient
    bs = Kernel(rng.standard_normal((3, 3, 1)), DEPTHWISE2D)
    as_ = Kernel(rng.standard_normal((3, 3, 1)), DEPTHWISE2D)
    beta = 0.37
    g = sobolev_grad(bs, as_, beta)
    fd3 = np.zeros((3, 3, 1))
    for i in range(3):
        for j in range(3):
            e = np.zeros((3, 3, 1))
            e[i, j, 0] = step
            fd3[i, j, 0] = (sobolev_value(bs.with_data(bs.data + e), as_, beta)
                            - sobolev_value(bs.with_data(bs.data - e), as_, beta)) / (2 * step)
    check("sobolev_grad", _rel_err(g, fd3), 1e-6)

    # unrolled reverse mode through the L-step proximal-gradient map
    upper_u = quadratic_bilevel_instance(4, seed + 2)
    L_steps, pstep = 6, 0.1
    gu, _ = unrolled_gradient(upper_u, upper_u.b0, upper_u.x0, L_steps, pstep)
    fd4 = np.zeros((4, 4))
    h = 1e-6
    for i in range(4):
        for j in range(4):
            e = np.zeros((4, 4))
            e[i, j] = h

            def truncated(bdata):
                kb = Kernel(bdata, DENSE1D)
                pb = upper_u.lower_problem(kb)
                xl = prox_grad_iterations(pb.op, pb.y, pb.alpha, 0.0, upper_u.reg.l2,
                                          upper_u.x0, L_steps, pstep)
                return upper_u.loss(xl, kb)

            fd4[i, j] = (truncated(upper_u.b0.data + e) - truncated(upper_u.b0.data - e)) / (2 * h)
    check("unrolled_reverse_mode", _rel_err(gu, fd4), 1e-4)

    return SuiteResult("fd", ok, details)


def cg_suite(n_systems: int = 100, seed: int = 0) -> SuiteResult:
    """CG residual contract on random SPD systems."""
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(n_systems):
        n = int(rng.integers(3, 25))
        m = rng.standard_normal((n, n))
        h = m @ m.T + n * np.eye(n)
        rhs = rng.standard_normal(n)
        tol = 10.0 ** rng.uniform(-10, -4)
        res = cg_solve(lambda v: h @ v, rhs, tol=tol, max_iters=2000)
        if res.converged and res.residual > tol:
            violations += 1
        if abs(res.residual - np.linalg.norm(h @ res.q - rhs)) > 1e-12 * (1 + res.residual):
            violations += 1
    return SuiteResult(
        "cg", violations == 0,
        [f"{n_systems} random SPD systems, {violations} residual-contract violations"],
    )


def oracle_suite(n_instances: int = 50, max_dim: int = 20, seed: int = 0,
                 tol: float = 1e-6) -> SuiteResult:
    """Inexact hypergradient at eps = delta = 1e-10 vs the explicit-inverse
    oracle on random quadratic bilevel instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        n = int(rng.integers(2, max_dim + 1))
        upper = quadratic_bilevel_instance(n, seed * 1000 + i)
        z_exact = dense_ift_oracle(upper, upper.b0)
        state = WarmState(x=upper.x0.copy())
        res = inexact_hypergradient(upper, upper.b0, 1e-10, 1e-10, state,
                                    cg_max_iters=2000)
        worst = max(worst, _rel_err(res.z, z_exact))
    return SuiteResult(
        "oracle", worst <= tol,
        [f"{n_instances} instances (dim <= {max_dim}), worst rel err {worst:.2e} (tol {tol:.0e})"],
    )


def lemma3_suite(n_instances: int = 100, seed: int = 0) -> SuiteResult:
    """A-posteriori distance bound ||x~ - x^|| <= ||grad h(x~)|| / mu on
    strongly convex quadratic lower problems with a computable minimizer."""
    rng = np.random.default_rng(seed)
    violations = 0
    for i in range(n_instances):
        n = int(rng.integers(2, 15))
        m = rng.standard_normal((n, n)) / np.sqrt(n)
        y = rng.standard_normal(n)
        alpha = float(rng.uniform(0.05, 2.0))
        p = LowerProblem(DenseOperator(m), y, alpha, SmoothedElasticNet(0.0, 1.0, 1e-4))
        x_hat = np.linalg.solve(m.T @ m + alpha * np.eye(n), m.T @ y)
        hess = 2.0 * m.T @ m + 2.0 * alpha * np.eye(n)
        mu_true = float(np.linalg.eigvalsh(hess).min())
        eps = 10.0 ** rng.uniform(-8, -1)
        res = solve_lower(p, np.zeros(n), eps, mu_true, max_iters=200000)
        if np.linalg.norm(res.x_tilde - x_hat) > res.grad_norm / mu_true + 1e-12:
            violations += 1
    return SuiteResult(
        "lemma3", violations == 0,
        [f"{n_instances} quadratic instances, {violations} certificate violations"],
    )


def lemma1_suite(seed: int = 0, n: int = 80, max_upper_iters: int = 8,
                 slack: float = 1e-8) -> SuiteResult:
    """Exact sufficient decrease on every accepted MAID step of a small 1D
    deconvolution, re-evaluated with a tight lower solve."""
    upper = build_deconv1d(seed=seed, n=n, num_pieces=4)
    cfg = MAIDConfig(max_upper_iters=max_upper_iters, audit_exact=True, audit_eps=1e-10)
    _, _, trace = maid_run(upper, cfg)
    violations = sum(
        1 for before, after, required in trace.audit
        if after - before > -required + slack
    )
    return SuiteResult(
        "lemma1", len(trace.audit) > 0 and violations == 0,
        [f"{len(trace.audit)} accepted steps audited at eps=1e-10, {violations} violations"],
    )


SUITES = {
    "fd": fd_suite,
    "cg": cg_suite,
    "oracle": oracle_suite,
    "lemma3": lemma3_suite,
    "lemma1": lemma1_suite,
}


def run_suites(names=None, mutate: str | None = None) -> list:
    """Run the requested suites (all by default) and return their results."""
    selected = list(SUITES) if not names else list(names)
    results = []
    for name in selected:
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}; available: {', '.join(SUITES)}")
        if name == "fd":
            results.append(fd_suite(mutate=mutate))
        else:
            results.append(SUITES[name]())
    return results
