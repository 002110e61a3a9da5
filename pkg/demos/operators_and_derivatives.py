"""Operators and their derivative products.

Builds the two operator parametrizations (dense 1D matrix, depthwise 2D
stencil), verifies the adjoint pairing numerically, estimates spectral
norms against a dense eigensolve, and checks the kernel-space gradient
<kernel_gram_correlation(x, v), db> = <db * x, v> that every hypergradient
in this library relies on.
"""
import numpy as np

from adp.operators import (
    DENSE1D,
    DEPTHWISE2D,
    ConvOperator,
    Kernel,
    gaussian_conv_matrix,
    kernel_gram_correlation,
    op_norm_sq,
)

rng = np.random.default_rng(0)

print("== dense 1D Gaussian convolution matrix ==")
A = gaussian_conv_matrix(n=200, sigma=5.0)
x = rng.random(200)
y = rng.random(200)
pair_gap = abs(np.vdot(A.apply(x), y) - np.vdot(x, A.adjoint(y)))
print(f"adjoint pairing |<Ax,y> - <x,A^T y>| = {pair_gap:.2e}")

est = op_norm_sq(A)
exact = float(np.linalg.eigvalsh(A.matrix.T @ A.matrix).max())
print(f"||A||^2 power iteration {est:.10f} vs eigensolve {exact:.10f}")

print("\n== depthwise 5x5 stencil on a 32x40x3 image ==")
stencil = Kernel(rng.standard_normal((5, 5, 3)) / 5, DEPTHWISE2D)
B = ConvOperator(stencil, (32, 40, 3))
u = rng.random((32, 40, 3))
v = rng.random((32, 40, 3))
pair_gap = abs(np.vdot(B.apply(u), v) - np.vdot(u, B.adjoint(v)))
print(f"adjoint pairing gap = {pair_gap:.2e}")

print("\n== kernel-space gradient of b -> <B_b u, v> ==")
grad_kernel = kernel_gram_correlation(u, v, stencil)
worst = 0.0
for _ in range(20):
    db = rng.standard_normal((5, 5, 3))
    lhs = np.vdot(grad_kernel, db)
    rhs = np.vdot(ConvOperator(stencil.with_data(db), u.shape).apply(u), v)
    worst = max(worst, abs(lhs - rhs) / abs(rhs))
print(f"pairing identity worst relative gap over 20 directions: {worst:.2e}")
