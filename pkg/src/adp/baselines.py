"""Fixed-accuracy baselines: implicit differentiation with a fixed
high-iteration lower solve, and unrolled differentiation through a fixed
number of proximal-gradient steps (hand-derived reverse mode).

Both use the proximal-gradient lower iteration
    x_{t+1} = soft(x_t - lam_x * (2 B^T(B x_t - y) + 2 alpha l2 x_t),
                   lam_x * alpha * l1)
on the (nonsmooth) elastic net, warm-started across outer iterations, and a
plain gradient-descent update on the kernel.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .hypergradient import cg_solve, mixed_second_transpose, sobolev_grad, upper_fit_grad
from .lower_solvers import lower_hess_diag, lower_hess_vec
from .maid import RunTrace
from .operators import Kernel, kernel_gram_correlation
from .regularizers import prox_l1


@dataclass
class BaselineConfig:
    method: str = "ift"           # "ift" | "unrolled"
    lower_iters: int = 500        # 500 for ift, 50 for unrolled
    upper_step: float = 0.1
    upper_iters: int = 100
    warm_start: bool = True
    step_x: float = 0.1           # lam_x, proximal-gradient step
    cg_tol: float = 1e-10
    cg_max_iters: int = 400
    memory_cap_bytes: int = 1 << 30

    def __post_init__(self):
        if self.lower_iters < 0:
            raise ValueError("lower_iters must be >= 0")
        if self.method not in ("ift", "unrolled"):
            raise ValueError(f"unknown baseline method {self.method!r}")


def _smooth_grad(op, y, alpha, l2, x):
    return 2.0 * op.adjoint(op.apply(x) - y) + 2.0 * alpha * l2 * x


def prox_grad_iterations(op, y, alpha, l1, l2, x0, n_iters, step, keep_trajectory=False):
    """Fixed-count proximal-gradient steps; optionally keep all iterates."""
    threshold = step * alpha * l1
    x = np.asarray(x0, dtype=float)
    traj = [x] if keep_trajectory else None
    for _ in range(n_iters):
        x = prox_l1(x - step * _smooth_grad(op, y, alpha, l2, x), threshold)
        if keep_trajectory:
            traj.append(x)
    return (x, traj) if keep_trajectory else x


def run_ift(upper, cfg: BaselineConfig):
    """Implicit-differentiation baseline: fixed lower iterations, tight CG,
    constant-step gradient descent on the kernel."""
    if cfg.method != "ift":
        raise ValueError("run_ift requires cfg.method == 'ift'")
    b = upper.b0
    x = np.asarray(upper.x0, dtype=float).copy()
    reg = upper.reg
    trace = RunTrace(method="ift")
    lower_cum = 0
    cg_cum = 0
    t0 = time.perf_counter()
    q_warm = None
    for k in range(cfg.upper_iters):
        p = upper.lower_problem(b)
        x_start = x if cfg.warm_start else np.asarray(upper.x0, dtype=float)
        x = prox_grad_iterations(p.op, p.y, p.alpha, reg.l1, reg.l2,
                                 x_start, cfg.lower_iters, cfg.step_x)
        lower_cum += cfg.lower_iters
        rhs = upper_fit_grad(x, upper.A, upper.y_delta)
        cg = cg_solve(lambda v: lower_hess_vec(p, x, v), rhs,
                      cfg.cg_tol, cfg.cg_max_iters, x0=q_warm,
                      precond_diag=lower_hess_diag(p, x))
        q_warm = cg.q
        cg_cum += cg.iters
        z = -mixed_second_transpose(x, b, cg.q, p) + sobolev_grad(b, upper.a, upper.beta)
        trace.append(k, upper.loss(x, b), np.linalg.norm(z), 0.0, cfg.cg_tol,
                     cfg.upper_step, lower_cum, cg_cum, time.perf_counter() - t0)
        b = b.with_data(b.data - cfg.upper_step * z)
    trace.final_loss = upper.loss(x, b)
    return b, x, trace


def unrolled_gradient(upper, b: Kernel, x0, n_iters, step, memory_cap_bytes=1 << 30):
    """Gradient of b -> ||A x_L(b) - y||^2 + r(b) through L proximal-gradient
    steps, by reverse mode over the stored forward trajectory.

    x0 is treated as a constant (no gradient through earlier outer
    iterations).  The soft-threshold backward pass uses the 0/1 activity
    mask, with the kink resolved as 0.
    """
    x0 = np.asarray(x0, dtype=float)
    need = (2 * n_iters + 1) * x0.nbytes
    if need > memory_cap_bytes:
        raise MemoryError(
            f"unrolling {n_iters} iterations needs ~{need/2**20:.0f} MiB of trajectory "
            f"storage (cap {memory_cap_bytes/2**20:.0f} MiB); reduce lower_iters"
        )
    p = upper.lower_problem(b)
    reg = upper.reg
    threshold = step * p.alpha * reg.l1
    xs = [x0]
    masks = []
    x = x0
    for _ in range(n_iters):
        u = x - step * _smooth_grad(p.op, p.y, p.alpha, reg.l2, x)
        x = prox_l1(u, threshold)
        xs.append(x)
        masks.append(np.abs(u) > threshold)
    grad_b = sobolev_grad(b, upper.a, upper.beta)
    w = upper_fit_grad(x, upper.A, upper.y_delta)  # dl/dx_L
    for t in range(n_iters - 1, -1, -1):
        wu = np.where(masks[t], w, 0.0)  # dl/du_t
        x_t = xs[t]
        # u_t = x_t - step * (2 B^T (B x_t - y) + 2 alpha l2 x_t):
        # d<u_t, wu>/dB = -2 step [kgc(x_t, B wu) + kgc(wu, B x_t - y)]
        b_wu = p.op.apply(wu)
        resid = p.op.apply(x_t) - p.y
        grad_b = grad_b - 2.0 * step * (
            kernel_gram_correlation(x_t, b_wu, b)
            + kernel_gram_correlation(wu, resid, b)
        )
        # dl/dx_t = (I - step (2 B^T B + 2 alpha l2 I)) wu
        w = wu - step * (2.0 * p.op.adjoint(b_wu) + 2.0 * p.alpha * reg.l2 * wu)
    return grad_b, x


def run_unrolled(upper, cfg: BaselineConfig):
    """Unrolled-differentiation baseline (LISTA-style)."""
    if cfg.method != "unrolled":
        raise ValueError("run_unrolled requires cfg.method == 'unrolled'")
    b = upper.b0
    x = np.asarray(upper.x0, dtype=float).copy()
    trace = RunTrace(method="unrolled")
    lower_cum = 0
    t0 = time.perf_counter()
    for k in range(cfg.upper_iters):
        x_start = x if cfg.warm_start else np.asarray(upper.x0, dtype=float)
        z, x = unrolled_gradient(upper, b, x_start, cfg.lower_iters, cfg.step_x,
                                 cfg.memory_cap_bytes)
        lower_cum += cfg.lower_iters
        trace.append(k, upper.loss(x, b), np.linalg.norm(z), 0.0, 0.0,
                     cfg.upper_step, lower_cum, 0, time.perf_counter() - t0)
        b = b.with_data(b.data - cfg.upper_step * z)
    trace.final_loss = upper.loss(x, b)
    return b, x, trace
