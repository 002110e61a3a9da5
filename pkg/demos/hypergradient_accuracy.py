"""Inexact hypergradients against the explicit-inverse oracle.

On a dense quadratic bilevel instance the hypergradient has a closed form.
This script sweeps the solver accuracies eps = delta from 1e-2 down to
1e-10 and shows the error of the inexact hypergradient decaying, which is
the mechanism the adaptive outer loop exploits: cheap gradients early,
tight ones only when needed.
"""
import numpy as np

from adp.hypergradient import WarmState, inexact_hypergradient
from adp.verify import dense_ift_oracle, quadratic_bilevel_instance

upper = quadratic_bilevel_instance(n=12, seed=7)
z_exact = dense_ift_oracle(upper, upper.b0)
print(f"quadratic bilevel instance, dim 12, ||z_exact|| = {np.linalg.norm(z_exact):.4f}\n")

print(f"{'eps=delta':>10} {'rel error':>12} {'lower iters':>12} {'cg iters':>9}")
for exp in range(2, 11):
    tol = 10.0 ** (-exp)
    state = WarmState(x=upper.x0.copy())
    res = inexact_hypergradient(upper, upper.b0, tol, tol, state, cg_max_iters=2000)
    rel = np.linalg.norm(res.z - z_exact) / np.linalg.norm(z_exact)
    print(f"{tol:10.0e} {rel:12.3e} {res.lower_iters:12d} {res.cg_iters:9d}")

print("\nwarm-started second call at 1e-10 (caches primed):")
state = WarmState(x=upper.x0.copy())
inexact_hypergradient(upper, upper.b0, 1e-10, 1e-10, state, cg_max_iters=2000)
res = inexact_hypergradient(upper, upper.b0, 1e-10, 1e-10, state, cg_max_iters=2000)
print(f"lower iters {res.lower_iters}, cg iters {res.cg_iters}")
