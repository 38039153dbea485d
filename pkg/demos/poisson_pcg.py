#!/usr/bin/env python3
"""Adaptive Poisson solve on the Z-shape with PCG and the multilevel preconditioner.

Prints, per mesh, the number of PCG steps taken before the stopping
criterion fired, the estimator, and the preconditioned condition number.

    python demos/poisson_pcg.py [max_dofs]
"""
import sys

from afem.adaptivity import AdaptiveConfig, estimate_rate, run_adaptive
from afem.fem import assemble_linear, poisson_problem, stiffness_diagonal
from afem.solvers import MultilevelPreconditioner, condition_number

max_dofs = int(float(sys.argv[1])) if len(sys.argv) > 1 else 20000
spec = poisson_problem(1.0)
rec = run_adaptive(spec, "z_shape", AdaptiveConfig(theta=0.5, lambda_ctr=1e-2,
                                                   max_dofs=max_dofs, keep_history=True))

P = None
print(f"{'level':>5} {'dofs':>7} {'pcg steps':>9} {'eta':>11} {'cond':>7}")
for lv, h in zip(rec.levels, rec.history):
    d = stiffness_diagonal(h.mesh, spec)
    if P is None:
        P = MultilevelPreconditioner(h.mesh, d)
    else:
        P.add_level(h.mesh, h.relation_in, d)
    if lv.ell % 4 and lv is not rec.levels[-1]:
        continue
    K, _ = assemble_linear(h.mesh, spec)
    kappa = condition_number(K, P, "lanczos")[2] if K.shape[0] > 1 else 1.0
    print(f"{lv.ell:>5} {lv.num_free_dofs:>7} {lv.k_final:>9} {lv.eta:>11.4e} {kappa:>7.2f}")

print(f"status: {rec.status}")
print(f"slope vs dofs {estimate_rate(rec):.3f}, vs cumulative cost "
      f"{estimate_rate(rec, 'cum_cost'):.3f} (optimal -0.5)")
