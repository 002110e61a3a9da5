"""Lower-level solvers and the a-posteriori distance certificate.

On a strongly convex deconvolution problem with a computable minimizer,
each solver is asked for accuracy eps via the gradient test
||grad h(x~)|| <= eps * mu, and the certified bound ||x~ - x^|| <= eps is
checked against the true distance.
"""
import numpy as np

from adp.lower_solvers import LowerProblem, mu_of_b, solve_lower
from adp.operators import gaussian_conv_matrix
from adp.regularizers import SmoothedElasticNet

rng = np.random.default_rng(1)
n = 80
op = gaussian_conv_matrix(n, 3.0)
x_true = (rng.random(n) > 0.7) * rng.random(n)
y = op.apply(x_true) + 0.005 * rng.standard_normal(n)

alpha = 1.0
reg = SmoothedElasticNet(0.0, 0.05, 1e-4)  # quadratic: closed-form minimizer
p = LowerProblem(op, y, alpha, reg)
x_hat = np.linalg.solve(op.matrix.T @ op.matrix + alpha * reg.l2 * np.eye(n),
                        op.matrix.T @ y)
mu = mu_of_b(p, 1e-9)
print(f"mu(b) = alpha * mu_J = {mu:.3e}")

print(f"{'method':>9} {'eps':>8} {'iters':>6} {'true dist':>12} {'certified':>12}")
for method in ["proxgrad", "agd", "fista_sc"]:
    for eps in [1e-2, 1e-5]:
        res = solve_lower(p, np.zeros(n), eps=eps, mu=mu, max_iters=200000,
                          method=method)
        dist = np.linalg.norm(res.x_tilde - x_hat)
        print(f"{method:>9} {eps:8.0e} {res.iters:6d} {dist:12.3e} "
              f"{res.grad_norm / mu:12.3e}   bound holds: {dist <= res.grad_norm / mu}")

print("\nWarm starting: resume from the eps=1e-2 solution and refine to 1e-8")
coarse = solve_lower(p, np.zeros(n), eps=1e-2, mu=mu, max_iters=200000)
fine = solve_lower(p, coarse.x_tilde, eps=1e-8, mu=mu, max_iters=200000)
cold = solve_lower(p, np.zeros(n), eps=1e-8, mu=mu, max_iters=200000)
print(f"warm refinement used {fine.iters} iterations vs {cold.iters} from cold")
