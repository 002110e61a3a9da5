"""Acceptance gate: every criterion below prints one PASS/FAIL line.

The 1D comparison criteria run budget-matched configurations (the adaptive
method, the 500-iteration implicit-differentiation baseline and the
50-iteration unrolled baseline share data, initialization and comparable
compute); the 2D criteria run on a 150x200 crop.  All runs are
deterministic for a fixed seed.
"""
import time

import numpy as np
import pytest

from adp.baselines import BaselineConfig, run_ift, run_unrolled
from adp.maid import MAIDConfig, maid_run
from adp.metrics_io import metric_report, rel_l2_error
from adp.problems import build_deconv1d, build_motion2d, build_semiblind2d, solve_lower_at
from adp.verify import cg_suite, fd_suite, lemma3_suite, oracle_suite

SEED = 1


def _report(criterion, passed, detail):
    print(f"\n[{'PASS' if passed else 'FAIL'}] acceptance {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def deconv_runs():
    """Budget-matched 1D comparison shared by criteria 3, 4 and 5."""
    runs = {}
    upper = build_deconv1d(seed=SEED)
    t0 = time.perf_counter()
    b, x, trace = maid_run(upper, MAIDConfig(max_upper_iters=60, audit_exact=True))
    runs["maid"] = {
        "trace": trace,
        "rel_l2": rel_l2_error(x, upper.ground_truth),
        "lower_iters": trace.lower_iters_cum[-1],
        "wall": time.perf_counter() - t0,
    }
    upper = build_deconv1d(seed=SEED)
    t0 = time.perf_counter()
    b, x, trace = run_ift(upper, BaselineConfig(
        method="ift", lower_iters=500, upper_iters=150, upper_step=0.002))
    runs["ift"] = {
        "trace": trace,
        "rel_l2": rel_l2_error(x, upper.ground_truth),
        "lower_iters": trace.lower_iters_cum[-1],
        "wall": time.perf_counter() - t0,
    }
    upper = build_deconv1d(seed=SEED)
    t0 = time.perf_counter()
    b, x, trace = run_unrolled(upper, BaselineConfig(
        method="unrolled", lower_iters=50, upper_iters=200, upper_step=0.005))
    runs["unrolled"] = {
        "trace": trace,
        "rel_l2": rel_l2_error(x, upper.ground_truth),
        "lower_iters": trace.lower_iters_cum[-1],
        "wall": time.perf_counter() - t0,
    }
    return runs


def test_criterion_1_hypergradient_oracle_equivalence():
    t0 = time.perf_counter()
    res = oracle_suite(n_instances=50, max_dim=20, seed=0, tol=1e-6)
    elapsed = time.perf_counter() - t0
    _report(
        "1 (hypergradient oracle equivalence)",
        res.passed and elapsed < 10.0,
        f"{'; '.join(res.details)}; runtime {elapsed:.1f}s < 10s",
    )


def test_criterion_2_lemma3_certificate():
    res = lemma3_suite(n_instances=100, seed=0)
    _report("2 (a-posteriori distance certificate)", res.passed, "; ".join(res.details))


def test_criterion_3_exact_sufficient_decrease(deconv_runs):
    audit = deconv_runs["maid"]["trace"].audit
    violations = [
        (before, after, required)
        for before, after, required in audit
        if after - before > -required + 1e-8
    ]
    _report(
        "3 (exact decrease on accepted steps)",
        len(audit) > 0 and not violations,
        f"{len(audit)} accepted steps re-checked with eps=1e-10 solves, "
        f"{len(violations)} violations",
    )


def test_criterion_4_efficiency_vs_ift(deconv_runs):
    maid = deconv_runs["maid"]
    ift = deconv_runs["ift"]
    loss_ok = maid["trace"].final_loss <= 1.05 * ift["trace"].final_loss
    budget_ok = maid["lower_iters"] <= 0.5 * ift["lower_iters"]
    runtime = maid["wall"] + ift["wall"]
    _report(
        "4 (efficiency vs implicit differentiation)",
        loss_ok and budget_ok and runtime < 300.0,
        f"final loss {maid['trace'].final_loss:.6g} vs {ift['trace'].final_loss:.6g} "
        f"(ratio {maid['trace'].final_loss / ift['trace'].final_loss:.3f} <= 1.05); "
        f"lower iters {maid['lower_iters']} vs {ift['lower_iters']} "
        f"(ratio {maid['lower_iters'] / ift['lower_iters']:.2f} <= 0.5); "
        f"runtime {runtime:.0f}s < 300s",
    )


def test_criterion_5_reconstruction_quality_1d(deconv_runs):
    m = deconv_runs["maid"]["rel_l2"]
    i = deconv_runs["ift"]["rel_l2"]
    u = deconv_runs["unrolled"]["rel_l2"]
    agree = abs(m - i) / i <= 0.10
    below = m <= u and i <= u
    _report(
        "5 (1D reconstruction quality)",
        agree and below,
        f"rel L2: maid {m:.4f}, ift {i:.4f} (gap {abs(m - i) / i:.1%} <= 10%), "
        f"unrolled {u:.4f} (both below: {below})",
    )


def _run_2d(build, max_upper):
    upper = build(seed=SEED, size=(150, 200))
    upper.mu_floor = 10.0
    upper.lower_max_iters = 1200
    tv = solve_lower_at(upper, upper.b0, eps=0.02, max_iters=1000)
    tv_rep = metric_report(tv.x_tilde, upper.ground_truth)
    cfg = MAIDConfig(max_upper_iters=max_upper, eps0=0.25, delta0=0.25,
                     alpha0=2e-5, max_bt=2, cg_max_iters=100)
    b, x, trace = maid_run(upper, cfg)
    rep = metric_report(x, upper.ground_truth)
    return upper, b, rep, tv_rep


@pytest.fixture(scope="module")
def runs_2d():
    t0 = time.perf_counter()
    motion = _run_2d(build_motion2d, max_upper=3)
    semiblind = _run_2d(build_semiblind2d, max_upper=3)
    return motion, semiblind, time.perf_counter() - t0


def test_criterion_6_2d_improvement(runs_2d):
    (_, _, m_rep, m_tv), (_, _, s_rep, s_tv), elapsed = runs_2d
    ok = (
        m_rep.psnr_db > m_tv.psnr_db and m_rep.ssim > m_tv.ssim
        and s_rep.psnr_db > s_tv.psnr_db and s_rep.ssim > s_tv.ssim
    )
    _report(
        "6 (2D improvement over the lower-level-only baseline)",
        ok and elapsed < 900.0,
        f"motion: psnr {m_rep.psnr_db:.2f} > {m_tv.psnr_db:.2f}, "
        f"ssim {m_rep.ssim:.4f} > {m_tv.ssim:.4f}; "
        f"semi-blind: psnr {s_rep.psnr_db:.2f} > {s_tv.psnr_db:.2f}, "
        f"ssim {s_rep.ssim:.4f} > {s_tv.ssim:.4f}; runtime {elapsed:.0f}s < 900s",
    )


def test_criterion_7_semiblind_kernel_mass(runs_2d):
    _, (upper, b, _, _), _ = runs_2d[0], runs_2d[1], runs_2d[2]
    diff = np.abs(b.data - upper.b0.data)
    size = b.data.shape[0]
    diag = np.repeat(np.eye(size, dtype=bool)[:, :, None], b.data.shape[2], axis=2)
    off_frac = float(diff[~diag].sum() / max(diff.sum(), 1e-300))
    _report(
        "7 (semi-blind kernel recovery)",
        off_frac >= 0.30,
        f"{off_frac:.1%} of |b* - b0| l1 mass off the diagonal support (>= 30%)",
    )


def test_criterion_8_derivative_suite():
    fd = fd_suite(seed=0)
    cg = cg_suite(n_systems=100, seed=0)
    _report(
        "8 (derivative correctness suite)",
        fd.passed and cg.passed,
        "; ".join(fd.details + cg.details),
    )
