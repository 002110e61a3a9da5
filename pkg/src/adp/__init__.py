"""Adaptive inexact bilevel optimization for learned deconvolution operators.

The library solves bilevel problems of the form

    min_b  ||A x(b) - y||^2 + beta ||b - a||_{H1}^2
    s.t.   x(b) = argmin_x ||B_b x - y||^2 + alpha J(x)

with an adaptive inexact descent outer loop (backtracking on an inexact
sufficient-decrease test with adaptive solver accuracies), plus fixed-accuracy
implicit-differentiation and unrolled-differentiation baselines.
"""

from .baselines import BaselineConfig, run_ift, run_unrolled
from .hypergradient import HypergradResult, WarmState, cg_solve, inexact_hypergradient
from .lower_solvers import LowerProblem, LowerSolveResult, L_of_b, mu_of_b, solve_lower
from .maid import MAIDConfig, RunTrace, maid_run
from .metrics_io import MetricReport, metric_report, psnr, ssim
from .operators import ConvOperator, DenseOperator, Kernel, gaussian_conv_matrix, op_norm_sq
from .problems import (
    UpperProblem,
    build_deconv1d,
    build_motion2d,
    build_semiblind2d,
    piecewise_signal,
)
from .regularizers import SmoothedElasticNet, SmoothedTV, prox_l1, smoothed_abs_norm, tv_value

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig",
    "ConvOperator",
    "DenseOperator",
    "HypergradResult",
    "Kernel",
    "L_of_b",
    "LowerProblem",
    "LowerSolveResult",
    "MAIDConfig",
    "MetricReport",
    "RunTrace",
    "SmoothedElasticNet",
    "SmoothedTV",
    "UpperProblem",
    "WarmState",
    "build_deconv1d",
    "build_motion2d",
    "build_semiblind2d",
    "cg_solve",
    "gaussian_conv_matrix",
    "inexact_hypergradient",
    "maid_run",
    "metric_report",
    "mu_of_b",
    "op_norm_sq",
    "piecewise_signal",
    "prox_l1",
    "psnr",
    "run_ift",
    "run_unrolled",
    "smoothed_abs_norm",
    "solve_lower",
    "ssim",
    "tv_value",
]
