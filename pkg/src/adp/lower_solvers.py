"""Lower-level problem h(x, b) = ||Bx - y||^2 + alpha*J(x) and its solvers.

Solvers stop on the a-posteriori test ||grad_x h(x~, b)|| <= eps * mu(b),
which by strong convexity certifies ||x~ - x^|| <= eps.  All of them accept
a warm start and return the gradient norm evaluated at the returned point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import op_norm_sq


class SolveDiverged(RuntimeError):
    """Objective became non-finite during a lower-level solve."""


@dataclass(frozen=True)
class LowerProblem:
    op: object  # ConvOperator | DenseOperator
    y: np.ndarray
    alpha: float
    reg: object  # SmoothedElasticNet | SmoothedTV


@dataclass
class LowerSolveResult:
    x_tilde: np.ndarray
    grad_norm: float
    iters: int
    epsilon_achieved: float
    converged: bool


def lower_value(p: LowerProblem, x: np.ndarray) -> float:
    r = p.op.apply(x) - p.y
    return float(np.sum(r * r)) + p.alpha * p.reg.value(x)


def lower_grad(p: LowerProblem, x: np.ndarray) -> np.ndarray:
    """Exact gradient 2 B^T (Bx - y) + alpha * grad J(x)."""
    g = 2.0 * p.op.adjoint(p.op.apply(x) - p.y)
    if p.alpha != 0:
        g = g + p.alpha * p.reg.grad(x)
    return g


def lower_value_and_grad(p: LowerProblem, x: np.ndarray):
    """Objective and gradient sharing one forward pass."""
    r = p.op.apply(x) - p.y
    val = float(np.sum(r * r))
    g = 2.0 * p.op.adjoint(r)
    if p.alpha != 0:
        fused = getattr(p.reg, "value_and_grad", None)
        if fused is not None:
            rv, rg = fused(x)
        else:
            rv, rg = p.reg.value(x), p.reg.grad(x)
        val += p.alpha * rv
        g = g + p.alpha * rg
    return val, g


def lower_hess_vec(p: LowerProblem, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Hessian-vector product (2 B^T B + alpha * hess J(x)) v."""
    h = 2.0 * p.op.adjoint(p.op.apply(v))
    if p.alpha != 0:
        h = h + p.alpha * p.reg.hess_vec(x, v)
    return h


def lower_hess_diag(p: LowerProblem, x: np.ndarray) -> np.ndarray:
    """Diagonal of the lower Hessian (Jacobi preconditioner for CG),
    floored away from zero."""
    d = 2.0 * p.op.gram_diag()
    if p.alpha != 0:
        d = d + p.alpha * p.reg.hess_diag(x)
    return np.maximum(d, 1e-12 * float(d.max()) + 1e-300)


def mu_of_b(p: LowerProblem, mu_floor: float) -> float:
    """Strong convexity constant max(alpha * mu_J, mu_floor)."""
    if mu_floor <= 0:
        raise ValueError("mu_floor must be > 0")
    return max(p.alpha * p.reg.mu, mu_floor)


def L_of_b(p: LowerProblem, norm_sq_max_iters: int = 300, norm_sq_tol: float = 1e-4) -> float:
    """Lipschitz constant of grad_x h: 2 ||B||^2 + alpha * C_J.

    The norm estimate is deliberately loose: it seeds step sizes (refined by
    backtracking where enabled) and is dominated by alpha * C_J in practice.
    """
    return 2.0 * op_norm_sq(p.op, norm_sq_max_iters, norm_sq_tol) + p.alpha * p.reg.curvature


def _check_finite(val: float, t: int):
    if not np.isfinite(val):
        raise SolveDiverged(f"objective became non-finite at lower iteration {t}")


def solve_lower(
    p: LowerProblem,
    x0: np.ndarray,
    eps: float,
    mu: float,
    max_iters: int = 300,
    method: str = "agd",
    step_size: float | None = None,
    adaptive: bool = False,
) -> LowerSolveResult:
    """Drive ||grad_x h|| below eps * mu from the warm start x0.

    Parameters
    ----------
    method : "proxgrad" (plain gradient descent), "agd" (Nesterov with
        gradient restarts) or "fista_sc" (constant strongly convex momentum).
    step_size : gradient step; defaults to 1/L_of_b(p).
    adaptive : enable backtracking line search on the step size (needed when
        the curvature bound C_J is far from the curvature actually met along
        the trajectory, e.g. smoothed TV).

    Returns the max_iters-th iterate flagged not-converged if the tolerance
    was not met; grad_norm is always evaluated at the returned point.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if mu <= 0:
        raise ValueError("mu must be > 0")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != p.op.signal_shape:
        raise ValueError(f"x0 shape {x0.shape} does not match {p.op.signal_shape}")
    tol = eps * mu
    if step_size is None:
        lip = L_of_b(p)
        step_size = 1.0 / lip
    else:
        lip = 1.0 / step_size

    if method == "proxgrad":
        return _gradient_descent(p, x0, tol, mu, max_iters, step_size, adaptive)
    if method in ("agd", "fista_sc"):
        return _accelerated(p, x0, tol, mu, max_iters, lip, adaptive, method)
    raise ValueError(f"unknown lower solver method {method!r}")


def _result(x, g, t, mu, converged):
    gn = float(np.linalg.norm(g))
    return LowerSolveResult(x, gn, t, gn / mu, converged)


def _gradient_descent(p, x0, tol, mu, max_iters, step, adaptive):
    x = x0
    h_x, g = lower_value_and_grad(p, x)
    for t in range(max_iters):
        gn = float(np.linalg.norm(g))
        _check_finite(gn, t)
        if gn <= tol:
            return _result(x, g, t, mu, True)
        if adaptive:
            x, step = _backtracked_step(p, x, h_x, g, gn, 1.0 / step)
        else:
            x = x - step * g
        h_x, g = lower_value_and_grad(p, x)
    return _result(x, g, max_iters, mu, float(np.linalg.norm(g)) <= tol)


def _backtracked_step(p, y, h_y, g, gn, lip_try):
    """Find x = y - g/L satisfying the sufficient decrease h(x) <= h(y) - ||g||^2 / (2L)."""
    for _ in range(60):
        x = y - g / lip_try
        if lower_value(p, x) <= h_y - 0.5 * gn * gn / lip_try + 1e-15 * abs(h_y):
            return x, 1.0 / lip_try
        lip_try *= 2.0
    raise SolveDiverged("backtracking line search failed to find a decreasing step")


def _accelerated(p, x0, tol, mu, max_iters, lip, adaptive, method):
    x = x0
    x_prev = x0
    theta = None
    if method == "fista_sc":
        q = min(mu / lip, 1.0)
        theta = (1.0 - np.sqrt(q)) / (1.0 + np.sqrt(q))
    t_mom = 1.0
    lip_t = lip
    for t in range(max_iters):
        if method == "fista_sc":
            beta = theta
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
            beta = (t_mom - 1.0) / t_next
            t_mom = t_next
        y = x + beta * (x - x_prev)
        h_y, g = lower_value_and_grad(p, y)
        gn = float(np.linalg.norm(g))
        _check_finite(gn, t)
        if gn <= tol:
            return _result(y, g, t, mu, True)
        x_prev = x
        if adaptive:
            x, step = _backtracked_step(p, y, h_y, g, gn, lip_t)
            lip_t = max(1.0 / step * 0.9, lip * 1e-8)  # let the step grow again
        else:
            x = y - g / lip_t
        # gradient-based restart: momentum pointing uphill
        if method == "agd" and np.vdot(g, x - x_prev) > 0:
            t_mom = 1.0
            x_prev = x
    g = lower_grad(p, x)
    return _result(x, g, max_iters, mu, float(np.linalg.norm(g)) <= tol)
