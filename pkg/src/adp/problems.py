"""Experiment builders: data synthesis, blur kernels, noise and the
upper-level problem container shared by all optimization methods."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hypergradient import sobolev_value, upper_fit_grad
from .lower_solvers import LowerProblem, LowerSolveResult, mu_of_b, solve_lower
from .operators import (
    DENSE1D,
    DEPTHWISE2D,
    Kernel,
    gaussian_conv_matrix,
    operator_from_kernel,
)
from .regularizers import SmoothedElasticNet, SmoothedTV


@dataclass
class UpperProblem:
    """Bilevel problem instance: fixed fit operator A and data, a Sobolev
    anchor (a, beta), and a lower-problem factory parameterized by the kernel."""

    name: str
    A: object
    a: Kernel
    y_delta: np.ndarray
    beta: float
    alpha: float
    reg: object
    b0: Kernel
    x0: np.ndarray
    ground_truth: np.ndarray | None = None
    mu_floor: float = 1e-3
    lower_method: str = "agd"
    lower_max_iters: int = 300
    lower_step: float | None = None
    lower_adaptive: bool = False
    y_lower: np.ndarray | None = None  # lower-level data when it differs from y_delta

    def lower_problem(self, b: Kernel) -> LowerProblem:
        y = self.y_delta if self.y_lower is None else self.y_lower
        op = operator_from_kernel(b, y.shape)
        return LowerProblem(op, y, self.alpha, self.reg)

    def fit_value(self, x: np.ndarray) -> float:
        r = self.A.apply(x) - self.y_delta
        return float(np.sum(r * r))

    def loss(self, x: np.ndarray, b: Kernel) -> float:
        """Upper objective l(x, b) = ||Ax - y||^2 + r(b) at the given iterates."""
        return self.fit_value(x) + sobolev_value(b, self.a, self.beta)

    def fit_grad(self, x: np.ndarray) -> np.ndarray:
        return upper_fit_grad(x, self.A, self.y_delta)


def solve_lower_at(upper: UpperProblem, b: Kernel, x0: np.ndarray | None = None,
                   eps: float = 1e-3, max_iters: int | None = None) -> LowerSolveResult:
    """Solve the lower-level problem at a fixed kernel (the "TV" baseline at b0)."""
    p = upper.lower_problem(b)
    mu = mu_of_b(p, upper.mu_floor)
    return solve_lower(
        p,
        upper.x0 if x0 is None else x0,
        eps,
        mu,
        max_iters=upper.lower_max_iters if max_iters is None else max_iters,
        method=upper.lower_method,
        step_size=upper.lower_step,
        adaptive=upper.lower_adaptive,
    )


def piecewise_signal(n: int, num_pieces: int, seed: int) -> np.ndarray:
    """Random piecewise-constant signal with values in [0, 1].

    Deterministic per seed, with exactly num_pieces - 1 jumps (consecutive
    piece values are kept at least 0.1 apart).
    """
    if not (n >= num_pieces >= 1):
        raise ValueError("need n >= num_pieces >= 1")
    rng = np.random.default_rng(seed)
    breaks = np.sort(rng.choice(np.arange(1, n), size=num_pieces - 1, replace=False))
    values = [float(rng.uniform(0.0, 1.0))]
    for _ in range(num_pieces - 1):
        v = float(rng.uniform(0.0, 1.0))
        while abs(v - values[-1]) < 0.1:
            v = float(rng.uniform(0.0, 1.0))
        values.append(v)
    signal = np.empty(n)
    edges = np.concatenate(([0], breaks, [n]))
    for i in range(num_pieces):
        signal[edges[i]:edges[i + 1]] = values[i]
    return signal


def motion_kernel(size: int = 5, channels: int = 3) -> Kernel:
    """Diagonal motion blur stencil (ones on the main diagonal, sum 1 per channel)."""
    data = np.repeat((np.eye(size) / size)[:, :, None], channels, axis=2)
    return Kernel(data, DEPTHWISE2D)


def gaussian_kernel_2d(size: int = 5, sigma: float = 0.5, channels: int = 3) -> Kernel:
    """Isotropic Gaussian stencil normalized to sum 1 per channel."""
    half = size // 2
    g = np.arange(-half, half + 1, dtype=float)
    w = np.exp(-(g[:, None] ** 2 + g[None, :] ** 2) / (2.0 * sigma**2))
    w /= w.sum()
    return Kernel(np.repeat(w[:, :, None], channels, axis=2), DEPTHWISE2D)


def default_test_image(h: int = 300, w: int = 400) -> np.ndarray:
    """Deterministic synthetic RGB test image: smooth gradients plus
    piecewise-constant shapes (suitable for TV experiments), values in [0, 1]."""
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)
    img = np.stack(
        [
            0.25 + 0.45 * xx,
            0.25 + 0.45 * yy,
            0.45 + 0.25 * np.sin(3.0 * np.pi * xx) * np.sin(2.0 * np.pi * yy),
        ],
        axis=2,
    )
    circle = (yy - 0.32) ** 2 + (xx - 0.28) ** 2 < 0.04
    img[circle] = [0.85, 0.15, 0.15]
    ring = np.abs(np.sqrt((yy - 0.35) ** 2 + (xx - 0.75) ** 2) - 0.18) < 0.035
    img[ring] = [0.95, 0.85, 0.1]
    rect = (yy > 0.6) & (yy < 0.85) & (xx > 0.15) & (xx < 0.45)
    img[rect] = [0.1, 0.55, 0.8]
    bars = (xx > 0.58) & (xx < 0.92) & (yy > 0.62) & (yy < 0.9)
    stripe = (np.floor((xx - 0.58) * 24) % 2).astype(bool)
    img[bars & stripe] = [0.9, 0.9, 0.9]
    img[bars & ~stripe] = [0.2, 0.2, 0.25]
    return np.clip(img, 0.0, 1.0)


def _load_image(image_path, size):
    from PIL import Image

    h, w = size
    if image_path is None:
        return default_test_image(h, w)
    try:
        with Image.open(image_path) as im:
            im = im.convert("RGB").resize((w, h), Image.LANCZOS)
            return np.asarray(im, dtype=float) / 255.0
    except OSError as exc:
        raise OSError(f"cannot read image {image_path}: {exc}") from exc


def build_deconv1d(
    seed: int = 0,
    n: int = 500,
    num_pieces: int = 6,
    blur_sigma: float = 5.0,
    noise_sigma: float = 5e-3,
    l1: float = 1.2e-3,
    l2: float = 4e-3,
    smoothing_nu: float = 1e-4,
) -> UpperProblem:
    """1D Gaussian deconvolution with an elastic-net lower problem.

    The optimization variable is the full n x n matrix; the Sobolev anchor
    weight is zero (matching the 1D comparison setup).
    """
    x_true = piecewise_signal(n, num_pieces, seed)
    A = gaussian_conv_matrix(n, blur_sigma)
    y = A.apply(x_true)
    noise_rng = np.random.default_rng([seed, 1])
    y_delta = y + noise_sigma * noise_rng.standard_normal(n)
    a = Kernel(A.matrix.copy(), DENSE1D)
    return UpperProblem(
        name="deconv1d",
        A=A,
        a=a,
        y_delta=y_delta,
        beta=0.0,
        alpha=1.0,
        reg=SmoothedElasticNet(l1, l2, smoothing_nu),
        b0=a,
        x0=np.zeros(n),
        ground_truth=x_true,
        mu_floor=1e-3,
        lower_method="agd",
        lower_max_iters=300,
    )


def build_motion2d(
    image_path=None,
    seed: int = 0,
    size: tuple = (300, 400),
    alpha: float = 0.6,
    beta: float = 0.3,
    nu: float = 1e-4,
    noise_sigma: float = 0.02,
    kernel_size: int = 5,
) -> UpperProblem:
    """2D motion-blur deblurring with smoothed TV and a Sobolev kernel anchor."""
    x_true = _load_image(image_path, size)
    kernel = motion_kernel(kernel_size, x_true.shape[2])
    A = operator_from_kernel(kernel, x_true.shape)
    noise_rng = np.random.default_rng([seed, 1])
    y_delta = A.apply(x_true) + noise_sigma * noise_rng.standard_normal(x_true.shape)
    return UpperProblem(
        name="motion2d",
        A=A,
        a=kernel,
        y_delta=y_delta,
        beta=beta,
        alpha=alpha,
        reg=SmoothedTV(nu),
        b0=kernel,
        x0=y_delta.copy(),
        ground_truth=x_true,
        mu_floor=1e-3,
        lower_method="agd",
        lower_max_iters=300,
        lower_adaptive=True,
    )


def build_semiblind2d(
    image_path=None,
    seed: int = 0,
    size: tuple = (300, 400),
    alpha: float = 0.6,
    beta: float = 0.3,
    nu: float = 1e-4,
    noise_sigma: float = 0.02,
    kernel_size: int = 5,
    gauss_sigma: float = 0.5,
) -> UpperProblem:
    """Semi-blind deblurring: data blurred by Gaussian-after-motion, but only
    the motion component is assumed known (a = b0 = motion kernel); the
    Gaussian part is the model error the learned kernel has to absorb."""
    x_true = _load_image(image_path, size)
    channels = x_true.shape[2]
    motion = motion_kernel(kernel_size, channels)
    A1 = operator_from_kernel(motion, x_true.shape)
    gauss = gaussian_kernel_2d(kernel_size, gauss_sigma, channels)
    A2 = operator_from_kernel(gauss, x_true.shape)
    noise_rng = np.random.default_rng([seed, 1])
    y_delta = A2.apply(A1.apply(x_true)) + noise_sigma * noise_rng.standard_normal(x_true.shape)
    return UpperProblem(
        name="semiblind2d",
        A=A1,
        a=motion,
        y_delta=y_delta,
        beta=beta,
        alpha=alpha,
        reg=SmoothedTV(nu),
        b0=motion,
        x0=y_delta.copy(),
        ground_truth=x_true,
        mu_floor=1e-3,
        lower_method="agd",
        lower_max_iters=300,
        lower_adaptive=True,
    )
