"""Lower-level regularizers with gradients, Hessian-vector products and
the strong-convexity / curvature constants the solvers need.

The absolute value is smoothed everywhere as rho(t) = sqrt(t^2 + nu^2) - nu,
which is twice differentiable for nu > 0 and recovers |t| at nu = 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def smoothed_abs_norm(x: np.ndarray, nu: float) -> float:
    """Sum of sqrt(x_i^2 + nu^2) - nu; the l1 norm when nu = 0."""
    if nu < 0:
        raise ValueError("nu must be >= 0")
    x = np.asarray(x, dtype=float)
    return float(np.sum(np.sqrt(x * x + nu * nu) - nu))


def prox_l1(x: np.ndarray, threshold: float) -> np.ndarray:
    """Component-wise soft threshold sign(x) * max(|x| - threshold, 0)."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def _rho_grad(t: np.ndarray, nu: float) -> np.ndarray:
    return t / np.sqrt(t * t + nu * nu)


def _rho_curv(t: np.ndarray, nu: float) -> np.ndarray:
    # second derivative of sqrt(t^2 + nu^2): nu^2 / (t^2 + nu^2)^(3/2)
    return nu * nu / np.power(t * t + nu * nu, 1.5)


def _as_image(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError(f"expected an (h, w, c) image, got shape {x.shape}")
    return x


def image_forward_diff(x: np.ndarray) -> np.ndarray:
    """Forward differences along the first two axes, zero at the last row/column.

    Returns a (2,) + x.shape stack: [0] vertical, [1] horizontal.  Works on
    (h, w) grids and (h, w, c) images alike.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim < 2:
        raise ValueError(f"need at least two grid axes, got shape {x.shape}")
    d = np.zeros((2,) + x.shape)
    d[0, :-1] = x[1:] - x[:-1]
    d[1][:, :-1] = x[:, 1:] - x[:, :-1]
    return d


def image_forward_diff_adjoint(d: np.ndarray) -> np.ndarray:
    out = np.zeros(d.shape[1:])
    out[1:] += d[0, :-1]
    out[:-1] -= d[0, :-1]
    out[:, 1:] += d[1][:, :-1]
    out[:, :-1] -= d[1][:, :-1]
    return out


def tv_value(x: np.ndarray, nu: float) -> float:
    """Smoothed anisotropic total variation of an (h, w, c) image."""
    return smoothed_abs_norm(image_forward_diff(_as_image(x)), nu)


@dataclass(frozen=True)
class SmoothedElasticNet:
    """l1 * ||x||_nu + l2 * ||x||_2^2 with the smoothed absolute value."""

    l1: float
    l2: float
    nu: float = 1e-4

    def __post_init__(self):
        if self.l1 < 0 or self.l2 < 0 or self.nu < 0:
            raise ValueError("elastic net parameters must be non-negative")

    @property
    def mu(self) -> float:
        return 2.0 * self.l2

    @property
    def curvature(self) -> float:
        c = 2.0 * self.l2
        if self.l1 > 0:
            if self.nu <= 0:
                raise ValueError("nonsmooth l1 part has no curvature bound; need nu > 0")
            c += self.l1 / self.nu
        return c

    def _check_smooth(self):
        if self.l1 > 0 and self.nu <= 0:
            raise ValueError("gradient requested on the nonsmooth branch (nu = 0)")

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        v = self.l2 * float(np.sum(x * x))
        if self.l1 > 0:
            v += self.l1 * smoothed_abs_norm(x, self.nu)
        return v

    def grad(self, x: np.ndarray) -> np.ndarray:
        self._check_smooth()
        x = np.asarray(x, dtype=float)
        g = 2.0 * self.l2 * x
        if self.l1 > 0:
            g = g + self.l1 * _rho_grad(x, self.nu)
        return g

    def hess_vec(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        self._check_smooth()
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        h = 2.0 * self.l2 * v
        if self.l1 > 0:
            h = h + self.l1 * _rho_curv(x, self.nu) * v
        return h

    def hess_diag(self, x: np.ndarray) -> np.ndarray:
        self._check_smooth()
        x = np.asarray(x, dtype=float)
        d = np.full_like(x, 2.0 * self.l2)
        if self.l1 > 0:
            d = d + self.l1 * _rho_curv(x, self.nu)
        return d


@dataclass(frozen=True)
class SmoothedTV:
    """Smoothed anisotropic TV on images; not strongly convex (mu = 0)."""

    nu: float = 1e-4

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("nu must be >= 0")

    @property
    def mu(self) -> float:
        return 0.0

    @property
    def curvature(self) -> float:
        # ||D^T D|| <= 8 for the 2D forward-difference stack, times max rho'' = 1/nu
        if self.nu <= 0:
            raise ValueError("nonsmooth TV has no curvature bound; need nu > 0")
        return 8.0 / self.nu

    def value(self, x: np.ndarray) -> float:
        return tv_value(x, self.nu)

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.nu <= 0:
            raise ValueError("gradient requested on the nonsmooth branch (nu = 0)")
        x = _as_image(x)
        return image_forward_diff_adjoint(_rho_grad(image_forward_diff(x), self.nu))

    def value_and_grad(self, x: np.ndarray):
        """Value and gradient sharing one difference stack."""
        if self.nu <= 0:
            raise ValueError("gradient requested on the nonsmooth branch (nu = 0)")
        x = _as_image(x)
        d = image_forward_diff(x)
        root = np.sqrt(d * d + self.nu * self.nu)
        val = float(np.sum(root)) - self.nu * d.size
        return val, image_forward_diff_adjoint(d / root)

    def hess_vec(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.nu <= 0:
            raise ValueError("Hessian requested on the nonsmooth branch (nu = 0)")
        x = _as_image(x)
        v = _as_image(v)
        w = _rho_curv(image_forward_diff(x), self.nu) * image_forward_diff(v)
        return image_forward_diff_adjoint(w)

    def hess_diag(self, x: np.ndarray) -> np.ndarray:
        """diag(D^T W D): each pixel accumulates the curvature weights of its
        incident (real, not padded) difference edges."""
        if self.nu <= 0:
            raise ValueError("Hessian requested on the nonsmooth branch (nu = 0)")
        x = _as_image(x)
        d = image_forward_diff(x)
        wv = _rho_curv(d[0, :-1], self.nu)
        wh = _rho_curv(d[1][:, :-1], self.nu)
        diag = np.zeros_like(x)
        diag[:-1] += wv
        diag[1:] += wv
        diag[:, :-1] += wh
        diag[:, 1:] += wh
        return diag
