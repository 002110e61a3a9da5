"""Linear forward operators and their adjoints.

Two parametrizations are supported: a full dense matrix acting on 1D
signals (the operator *is* the optimization variable), and a small
per-channel 2D stencil applied depthwise with zero padding ("same"
convolution).  Both expose ``apply``/``adjoint`` and cache a spectral
norm estimate, which is all the rest of the library needs.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DENSE1D = "dense1d"
DEPTHWISE2D = "depthwise2d"


@dataclass(frozen=True)
class Kernel:
    """Point in kernel space: an (n, n) matrix or a (kh, kw, c) stencil."""

    data: np.ndarray
    layout: str

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", data)
        if not np.all(np.isfinite(data)):
            raise ValueError("kernel entries must be finite")
        if self.layout == DENSE1D:
            if data.ndim != 2 or data.shape[0] != data.shape[1]:
                raise ValueError(f"dense1d kernel must be square, got {data.shape}")
        elif self.layout == DEPTHWISE2D:
            if data.ndim != 3:
                raise ValueError(f"depthwise2d kernel must be (kh, kw, c), got {data.shape}")
            kh, kw, _ = data.shape
            if kh % 2 == 0 or kw % 2 == 0:
                raise ValueError(f"depthwise2d kernel must have odd spatial size, got {kh}x{kw}")
        else:
            raise ValueError(f"unknown kernel layout {self.layout!r}")

    def with_data(self, data: np.ndarray) -> "Kernel":
        return Kernel(np.asarray(data, dtype=float), self.layout)


class DenseOperator:
    """Full matrix operator on 1D signals; adjoint is the transpose."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix must be square, got {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("matrix entries must be finite")
        self.matrix = matrix
        self.signal_shape = (matrix.shape[1],)
        self._norm_sq = None

    @property
    def kernel(self) -> Kernel:
        return Kernel(self.matrix, DENSE1D)

    def gram_diag(self) -> np.ndarray:
        """diag(B^T B): squared column norms."""
        return np.sum(self.matrix * self.matrix, axis=0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != self.signal_shape:
            raise ValueError(f"expected signal of shape {self.signal_shape}, got {x.shape}")
        return self.matrix @ x

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != self.signal_shape:
            raise ValueError(f"expected signal of shape {self.signal_shape}, got {y.shape}")
        return self.matrix.T @ y


class ConvOperator:
    """Depthwise zero-padded "same" cross-correlation with a (kh, kw, c) stencil."""

    def __init__(self, kernel: Kernel, signal_shape: tuple):
        if kernel.layout != DEPTHWISE2D:
            raise ValueError("ConvOperator requires a depthwise2d kernel")
        signal_shape = tuple(signal_shape)
        if len(signal_shape) != 3:
            raise ValueError(f"signal shape must be (h, w, c), got {signal_shape}")
        if signal_shape[2] != kernel.data.shape[2]:
            raise ValueError(
                f"channel mismatch: image has {signal_shape[2]}, kernel {kernel.data.shape[2]}"
            )
        self.kernel = kernel
        self.signal_shape = signal_shape
        self._flipped = kernel.data[::-1, ::-1, :]
        self._norm_sq = None

    def _correlate(self, x: np.ndarray, stencil: np.ndarray) -> np.ndarray:
        out = np.empty(self.signal_shape)
        for c in range(self.signal_shape[2]):
            ndimage.correlate(x[:, :, c], stencil[:, :, c], output=out[:, :, c],
                              mode="constant", cval=0.0)
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != self.signal_shape:
            raise ValueError(f"expected image of shape {self.signal_shape}, got {x.shape}")
        return self._correlate(x, self.kernel.data)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != self.signal_shape:
            raise ValueError(f"expected image of shape {self.signal_shape}, got {y.shape}")
        return self._correlate(y, self._flipped)

    def gram_diag(self) -> np.ndarray:
        """diag(B^T B): sum of squared taps reaching each pixel under zero padding."""
        return self._correlate(np.ones(self.signal_shape), self._flipped**2)


def operator_from_kernel(kernel: Kernel, signal_shape: tuple):
    """Build the linear operator realizing a kernel on signals of the given shape."""
    if kernel.layout == DENSE1D:
        op = DenseOperator(kernel.data)
        if tuple(signal_shape) != op.signal_shape:
            raise ValueError(
                f"dense kernel of size {kernel.data.shape} cannot act on {signal_shape}"
            )
        return op
    return ConvOperator(kernel, signal_shape)


def op_norm_sq(op, max_iters: int = 500, tol: float = 1e-10) -> float:
    """Estimate ||B||^2 = lambda_max(B^T B) by power iteration.

    The result is cached on the operator (operators are immutable).  On
    non-convergence the best estimate is returned with a warning.
    """
    if op._norm_sq is not None:
        return op._norm_sq
    rng = np.random.default_rng(0)
    # DC-biased start: the top singular vector of a smoothing kernel is close
    # to constant, which makes the iteration converge in a few steps there,
    # while the noise component keeps generic operators covered.
    v = np.ones(op.signal_shape) + 0.01 * rng.standard_normal(op.signal_shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    converged = False
    for _ in range(max_iters):
        w = op.adjoint(op.apply(v))
        lam_new = float(np.linalg.norm(w))
        if lam_new == 0.0:  # operator is zero on this vector (e.g. B = 0)
            lam = 0.0
            converged = True
            break
        v = w / lam_new
        if abs(lam_new - lam) <= tol * max(lam_new, 1e-300):
            lam = lam_new
            converged = True
            break
        lam = lam_new
    if not converged:
        warnings.warn(
            f"power iteration did not converge in {max_iters} iterations; "
            f"returning best estimate {lam:.6e}",
            RuntimeWarning,
        )
    op._norm_sq = lam
    return lam


def gaussian_conv_matrix(n: int, sigma: float, truncation: float = 4.0) -> DenseOperator:
    """Dense n x n Gaussian convolution matrix, taps truncated at ceil(truncation*sigma).

    Tap weights are normalized to sum 1 before placement, so interior rows
    sum to exactly 1 while boundary rows lose the mass that falls outside.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = int(np.ceil(truncation * sigma))
    offsets = np.arange(-radius, radius + 1)
    taps = np.exp(-(offsets.astype(float) ** 2) / (2.0 * sigma**2))
    taps /= taps.sum()
    matrix = np.zeros((n, n))
    for i in range(n):
        lo = max(0, i - radius)
        hi = min(n, i + radius + 1)
        matrix[i, lo:hi] = taps[lo - (i - radius) : hi - (i - radius)]
    return DenseOperator(matrix)


def kernel_gram_correlation(x: np.ndarray, v: np.ndarray, shape_of: Kernel) -> np.ndarray:
    """Gradient of b -> <B_b x, v> restricted to the kernel support.

    Satisfies <kernel_gram_correlation(x, v), db> = <apply(db, x), v> for any
    kernel perturbation db, under the same zero-padding as ``apply``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != v.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {v.shape}")
    if shape_of.layout == DENSE1D:
        return np.outer(v, x)
    kh, kw, c = shape_of.data.shape
    if x.ndim != 3 or x.shape[2] != c:
        raise ValueError(f"expected (h, w, {c}) signals, got {x.shape}")
    h, w, _ = x.shape
    padded = np.zeros((h + kh - 1, w + kw - 1, c))
    padded[kh // 2 : kh // 2 + h, kw // 2 : kw // 2 + w] = x
    out = np.empty((kh, kw, c))
    for i in range(kh):
        for j in range(kw):
            out[i, j] = np.sum(padded[i : i + h, j : j + w] * v, axis=(0, 1))
    return out
