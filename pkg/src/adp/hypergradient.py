"""Inexact hypergradient of the bilevel objective.

The upper gradient w.r.t. the kernel b is assembled from an eps-accurate
lower solve, a CG solve of the lower Hessian system with residual delta,
the transposed mixed second derivative, and the gradient of the Sobolev
anchor term:

    z = -(d^2_{xb} h(x~, b))^T q + grad r(b),
    with  d^2_x h(x~, b) q = grad g(x~)  solved to ||residual|| <= delta.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lower_solvers import lower_hess_diag, lower_hess_vec, mu_of_b, solve_lower
from .operators import Kernel, kernel_gram_correlation
from .regularizers import image_forward_diff, image_forward_diff_adjoint


class NegativeCurvatureError(RuntimeError):
    """CG met a direction of non-positive curvature; the lower-level Hessian
    is not positive definite, violating the strong convexity assumption."""


@dataclass
class CGResult:
    q: np.ndarray
    residual: float
    iters: int
    converged: bool


def cg_solve(hess_vec, rhs: np.ndarray, tol: float, max_iters: int = 200,
             x0: np.ndarray | None = None,
             precond_diag: np.ndarray | None = None) -> CGResult:
    """Conjugate gradients for H q = rhs, stopping at ||H q - rhs|| <= tol.

    ``precond_diag`` enables Jacobi preconditioning (entries of diag(H), or
    an approximation); the stopping test stays on the unpreconditioned
    residual.  The returned residual is recomputed from scratch at the final
    iterate (not the recurrence residual), so the reported value is
    trustworthy.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    rhs = np.asarray(rhs, dtype=float)
    inv_diag = None
    if precond_diag is not None:
        precond_diag = np.asarray(precond_diag, dtype=float)
        if np.any(precond_diag <= 0):
            raise ValueError("preconditioner diagonal must be positive")
        inv_diag = 1.0 / precond_diag
    if x0 is None:
        q = np.zeros_like(rhs)
        r = rhs.copy()
    else:
        q = np.asarray(x0, dtype=float).copy()
        r = rhs - hess_vec(q)
    s = r if inv_diag is None else inv_diag * r
    p = s.copy()
    rs = float(np.vdot(r, s))
    iters = 0
    for iters in range(1, max_iters + 1):
        if np.linalg.norm(r) <= tol:
            iters -= 1
            break
        hp = hess_vec(p)
        curv = float(np.vdot(p, hp))
        if curv <= 0:
            raise NegativeCurvatureError(
                f"non-positive curvature p^T H p = {curv:.3e} in CG: the lower-level "
                "Hessian is not positive definite (strong convexity assumption violated)"
            )
        a = rs / curv
        q = q + a * p
        r = r - a * hp
        s = r if inv_diag is None else inv_diag * r
        rs_new = float(np.vdot(r, s))
        p = s + (rs_new / rs) * p
        rs = rs_new
    true_res = float(np.linalg.norm(hess_vec(q) - rhs))
    return CGResult(q, true_res, iters, true_res <= tol)


def upper_fit_grad(x: np.ndarray, A, y_delta: np.ndarray) -> np.ndarray:
    """Gradient of x -> ||Ax - y||^2, i.e. 2 A^T (Ax - y)."""
    return 2.0 * A.adjoint(A.apply(x) - y_delta)


def mixed_second_transpose(x_tilde: np.ndarray, b: Kernel, q: np.ndarray,
                           p) -> np.ndarray:
    """(d^2_{xb} h(x~, b))^T q: gradient w.r.t. b of <grad_x h(x~, b), q> at fixed x~.

    Only the fit term depends on b, giving
    2 * kgc(x~, Bq) + 2 * kgc(q, Bx~ - y); for a dense 1D kernel this is the
    rank-2 matrix 2 [(Bx~ - y) q^T + (Bq) x~^T].
    """
    residual = p.op.apply(x_tilde) - p.y
    return 2.0 * (
        kernel_gram_correlation(x_tilde, p.op.apply(q), b)
        + kernel_gram_correlation(q, residual, b)
    )


def sobolev_value(b: Kernel, a: Kernel, beta: float) -> float:
    """r(b) = beta * (||b - a||^2 + ||D(b - a)||^2), forward differences on the kernel grid."""
    if beta == 0:
        return 0.0
    d = b.data - a.data
    dd = image_forward_diff(d)
    return beta * (float(np.sum(d * d)) + float(np.sum(dd * dd)))


def sobolev_grad(b: Kernel, a: Kernel, beta: float) -> np.ndarray:
    """grad r(b) = 2 beta (I + D^T D)(b - a); zero when beta = 0."""
    if b.data.shape != a.data.shape:
        raise ValueError(f"kernel shapes differ: {b.data.shape} vs {a.data.shape}")
    if beta == 0:
        return np.zeros_like(b.data)
    d = b.data - a.data
    return 2.0 * beta * (d + image_forward_diff_adjoint(image_forward_diff(d)))


@dataclass
class WarmState:
    """Warm-start caches owned by the outer loop."""

    x: np.ndarray
    q: np.ndarray | None = None


@dataclass
class HypergradResult:
    z: np.ndarray
    x_tilde: np.ndarray
    cg_iters: int
    lower_iters: int
    cg_residual: float
    epsilon_used: float
    delta_used: float
    lower_converged: bool = True
    cg_converged: bool = True
    mu: float = 0.0


def inexact_hypergradient(upper, b: Kernel, eps: float, delta: float,
                          state: WarmState, cg_max_iters: int = 200) -> HypergradResult:
    """Algorithm composing the lower solve, CG and derivative products.

    ``upper`` supplies the problem data (see problems.UpperProblem): the
    fixed fit operator A, data y_delta, the Sobolev anchor (a, beta), the
    lower-problem factory and solver settings.  epsilon_used / cg_residual
    report the *achieved* accuracies (grad_norm/mu and the true CG
    residual), which the caller may adopt as its updated tolerances.
    """
    if eps <= 0 or delta <= 0:
        raise ValueError("eps and delta must be > 0")
    p = upper.lower_problem(b)
    mu = mu_of_b(p, upper.mu_floor)
    res = solve_lower(
        p, state.x, eps, mu,
        max_iters=upper.lower_max_iters,
        method=upper.lower_method,
        step_size=upper.lower_step,
        adaptive=upper.lower_adaptive,
    )
    state.x = res.x_tilde
    rhs = upper_fit_grad(res.x_tilde, upper.A, upper.y_delta)
    cg = cg_solve(
        lambda v: lower_hess_vec(p, res.x_tilde, v),
        rhs, delta, max_iters=cg_max_iters,
        x0=state.q,
        precond_diag=lower_hess_diag(p, res.x_tilde),
    )
    state.q = cg.q
    z = -mixed_second_transpose(res.x_tilde, b, cg.q, p) + sobolev_grad(b, upper.a, upper.beta)
    return HypergradResult(
        z=z,
        x_tilde=res.x_tilde,
        cg_iters=cg.iters,
        lower_iters=res.iters,
        cg_residual=cg.residual,
        epsilon_used=res.epsilon_achieved,
        delta_used=delta,
        lower_converged=res.converged,
        cg_converged=cg.converged,
        mu=mu,
    )
