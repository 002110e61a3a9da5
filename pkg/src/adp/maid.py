"""Outer loop: inexact hypergradient descent with backtracking on the
inexact sufficient-decrease condition and adaptive accuracies.

Each outer iteration recomputes the hypergradient at the current
accuracies (eps_k, delta_k), then runs a growing-budget backtracking
scheme: round j tries up to j step sizes (shrinking the trial step by
rho_down); if none satisfies psi <= 0, the accuracies are cut by nu_down
and the round restarts with budget j + 1 and a fresh trial step.  After an
accepted step, accuracies and step size grow again by (nu_up, nu_up,
rho_up).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .hypergradient import WarmState, inexact_hypergradient, upper_fit_grad
from .lower_solvers import mu_of_b, solve_lower
from .operators import Kernel, op_norm_sq

logger = logging.getLogger(__name__)


class BacktrackingStalled(RuntimeError):
    """Raised when accuracy reductions exhaust the hard retry cap; carries
    the trace recorded so far in .trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class MAIDConfig:
    rho_up: float = 1.1        # step growth after acceptance
    rho_down: float = 0.5      # step shrink inside backtracking
    nu_up: float = 1.25        # accuracy growth after acceptance
    nu_down: float = 0.5       # accuracy shrink after a failed round
    max_bt: int = 3            # initial backtracking budget j
    lam: float = 1e-4          # lambda in the sufficient-decrease test
    eps0: float = 1e-2
    delta0: float | None = None  # defaults to eps0
    alpha0: float = 0.1
    eps_stop: float = 1e-6
    max_upper_iters: int = 500
    max_accuracy_rounds: int = 50  # hard cap on nu_down reductions per outer iteration
    cg_max_iters: int = 200
    audit_exact: bool = False      # re-check each accepted step with a tight solve
    audit_eps: float = 1e-10
    audit_max_iters: int = 200000

    def __post_init__(self):
        if not (self.rho_up > 1 and 0 < self.rho_down < 1):
            raise ValueError("need rho_up > 1 and rho_down in (0, 1)")
        if not (self.nu_up > 1 and 0 < self.nu_down < 1):
            raise ValueError("need nu_up > 1 and nu_down in (0, 1)")
        if self.max_bt < 1 or self.lam <= 0 or self.alpha0 <= 0 or self.eps0 <= 0:
            raise ValueError("max_bt, lam, alpha0, eps0 must be positive")
        if self.eps_stop >= self.eps0:
            raise ValueError("eps_stop must be smaller than eps0")
        if self.delta0 is None:
            self.delta0 = self.eps0


@dataclass
class RunTrace:
    """Per-accepted-iteration log of a bilevel run."""

    method: str = ""
    k: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    lower_iters_cum: list = field(default_factory=list)
    cg_iters_cum: list = field(default_factory=list)
    wall_s: list = field(default_factory=list)
    audit: list = field(default_factory=list)  # (exact_before, exact_after, required_decrease)
    final_loss: float = float("nan")

    def append(self, k, loss, grad_norm, eps, delta, alpha, lower_cum, cg_cum, wall):
        self.k.append(int(k))
        self.loss.append(float(loss))
        self.grad_norm.append(float(grad_norm))
        self.eps.append(float(eps))
        self.delta.append(float(delta))
        self.alpha.append(float(alpha))
        self.lower_iters_cum.append(int(lower_cum))
        self.cg_iters_cum.append(int(cg_cum))
        self.wall_s.append(float(wall))

    def __len__(self):
        return len(self.k)


def lip_upper_x(A, max_iters: int = 500, tol: float = 1e-6) -> float:
    """Lipschitz constant of x -> grad_x ||Ax - y||^2, i.e. 2 ||A||^2."""
    return 2.0 * op_norm_sq(A, max_iters, tol)


def psi_value(loss_next, gnorm_next, loss_cur, gnorm_cur, eps_bar, alpha,
              z_norm_sq, lam, lip) -> float:
    """The inexact sufficient-decrease functional; acceptance requires <= 0."""
    return (
        loss_next
        + gnorm_next * eps_bar
        + 0.5 * lip * eps_bar**2
        - loss_cur
        + gnorm_cur * eps_bar
        + lam * alpha * z_norm_sq
    )


def psi(upper, candidate, current, eps_bar, alpha, z, lam, lip) -> float:
    """Evaluate psi at inexact iterates candidate = (x~_{k+1}, b_{k+1}) and
    current = (x~_k, b_k)."""
    x_next, b_next = candidate
    x_cur, b_cur = current
    return psi_value(
        upper.loss(x_next, b_next),
        float(np.linalg.norm(upper_fit_grad(x_next, upper.A, upper.y_delta))),
        upper.loss(x_cur, b_cur),
        float(np.linalg.norm(upper_fit_grad(x_cur, upper.A, upper.y_delta))),
        eps_bar, alpha, float(np.vdot(z, z)), lam, lip,
    )


def _solve_candidate(upper, b: Kernel, x_start, eps, max_iters=None):
    p = upper.lower_problem(b)
    mu = mu_of_b(p, upper.mu_floor)
    return solve_lower(
        p, x_start, eps, mu,
        max_iters=upper.lower_max_iters if max_iters is None else max_iters,
        method=upper.lower_method,
        step_size=upper.lower_step,
        adaptive=upper.lower_adaptive,
    )


def _exact_loss(upper, b: Kernel, x_start, cfg: MAIDConfig) -> float:
    res = _solve_candidate(upper, b, x_start, cfg.audit_eps, max_iters=cfg.audit_max_iters)
    return upper.loss(res.x_tilde, b)


def maid_run(upper, cfg: MAIDConfig, b0: Kernel | None = None):
    """Run the adaptive inexact descent loop on an upper-level problem.

    Returns (b_star, x_star, trace).  Terminates when eps_k falls to
    cfg.eps_stop or after cfg.max_upper_iters accepted steps; raises
    BacktrackingStalled when an outer iteration burns through
    cfg.max_accuracy_rounds accuracy reductions without acceptance.
    """
    b = upper.b0 if b0 is None else b0
    eps_k = cfg.eps0
    delta_k = cfg.delta0
    alpha_k = cfg.alpha0
    lip = lip_upper_x(upper.A)
    state = WarmState(x=np.asarray(upper.x0, dtype=float).copy())
    trace = RunTrace(method="maid")
    lower_cum = 0
    cg_cum = 0
    t0 = time.perf_counter()
    x_star = state.x
    stopped = False

    for k in range(cfg.max_upper_iters):
        if eps_k <= cfg.eps_stop:
            stopped = True
            break
        accepted = None
        rounds = 0
        j = cfg.max_bt
        while accepted is None:
            hg = inexact_hypergradient(upper, b, eps_k, delta_k, state,
                                       cg_max_iters=cfg.cg_max_iters)
            lower_cum += hg.lower_iters
            cg_cum += hg.cg_iters
            # Adopt realized accuracies upward when a solve missed its target
            # (the schedule stays honest); psi always uses the realized bound.
            eps_k = max(eps_k, hg.epsilon_used)
            delta_k = max(delta_k, hg.cg_residual)
            eps_cert = hg.epsilon_used
            z = hg.z
            z_norm_sq = float(np.vdot(z, z))
            loss_cur = upper.loss(hg.x_tilde, b)
            gnorm_cur = float(np.linalg.norm(upper_fit_grad(hg.x_tilde, upper.A,
                                                            upper.y_delta)))
            alpha_try = alpha_k  # step-size search restarts each accuracy round
            psi_vals = []
            for _ in range(j):
                b_cand = b.with_data(b.data - alpha_try * z)
                cand = _solve_candidate(upper, b_cand, state.x, eps_k)
                lower_cum += cand.iters
                eps_bar = max(eps_cert, cand.epsilon_achieved)
                val = psi_value(
                    upper.loss(cand.x_tilde, b_cand),
                    float(np.linalg.norm(upper_fit_grad(cand.x_tilde, upper.A,
                                                        upper.y_delta))),
                    loss_cur, gnorm_cur, eps_bar, alpha_try, z_norm_sq, cfg.lam, lip,
                )
                psi_vals.append(val)
                if val <= 0:
                    accepted = (b_cand, cand)
                    alpha_k = alpha_try
                    break
                # psi tends to its positive eps_bar floor as alpha -> 0, so two
                # consecutive rises mean further shrinking cannot succeed
                if len(psi_vals) >= 3 and psi_vals[-1] > psi_vals[-2] > psi_vals[-3]:
                    break
                alpha_try *= cfg.rho_down
            logger.debug(
                "k=%d round j=%d: eps=%.3g cert=%.3g |z|=%.3g loss=%.6g psi=%s",
                k, j, eps_k, eps_cert, np.sqrt(z_norm_sq), loss_cur,
                "/".join(f"{v:.3g}" for v in psi_vals),
            )
            if accepted is None:
                eps_k *= cfg.nu_down
                delta_k *= cfg.nu_down
                j += 1
                rounds += 1
                if eps_k <= cfg.eps_stop:
                    stopped = True
                    break
                if rounds >= cfg.max_accuracy_rounds:
                    logger.error(
                        "MAID backtracking stalled at iteration %d after %d accuracy "
                        "reductions (eps=%.3e, alpha=%.3e)", k, rounds, eps_k, alpha_k,
                    )
                    raise BacktrackingStalled(
                        f"no acceptable step after {rounds} accuracy reductions "
                        f"at outer iteration {k}", trace)
        if stopped or accepted is None:
            break

        b_cand, cand = accepted
        if cfg.audit_exact:
            exact_before = _exact_loss(upper, b, state.x, cfg)
            exact_after = _exact_loss(upper, b_cand, cand.x_tilde, cfg)
            trace.audit.append((exact_before, exact_after,
                                cfg.lam * alpha_k * z_norm_sq))
        trace.append(k, loss_cur, np.sqrt(z_norm_sq), eps_k, delta_k, alpha_k,
                     lower_cum, cg_cum, time.perf_counter() - t0)
        b = b_cand
        state.x = cand.x_tilde
        x_star = cand.x_tilde
        eps_k *= cfg.nu_up
        delta_k *= cfg.nu_up
        alpha_k *= cfg.rho_up

    trace.final_loss = upper.loss(x_star, b)
    return b, x_star, trace
