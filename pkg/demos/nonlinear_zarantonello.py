#!/usr/bin/env python3
"""Adaptive solve of -div(a(|grad u|^2) grad u) = 1 with a(t) = 1 + ln(1+t)/(1+t).

Each solver step is one Zarantonello update, i.e. one Poisson solve.  The
script checks the contraction factor on the final mesh against its bound.

    python demos/nonlinear_zarantonello.py [max_dofs]
"""
import sys

import numpy as np

from afem.adaptivity import AdaptiveConfig, estimate_rate, run_adaptive
from afem.experiments import random_function, verify_constants
from afem.fem import energy_norm, log_nonlinearity_problem, solve_discrete
from afem.solvers import zarantonello_q, zarantonello_step

max_dofs = int(float(sys.argv[1])) if len(sys.argv) > 1 else 10000
spec = log_nonlinearity_problem(1.0)
consts = verify_constants()
print(f"monotonicity constant {consts['inf']:.10f}, Lipschitz constant {consts['sup']:.10f}")
q = zarantonello_q(spec)
print(f"contraction bound q = {q:.4f}")

rec = run_adaptive(spec, "l_shape", AdaptiveConfig(theta=0.5, lambda_ctr=1e-2,
                                                   max_dofs=max_dofs, keep_history=True))
for lv in rec.levels[::3]:
    print(f"level {lv.ell:>3}: {lv.num_free_dofs:>6} dofs, {lv.k_final} steps, eta={lv.eta:.4e}")
print(f"slope vs dofs {estimate_rate(rec):.3f}, vs cumulative cost "
      f"{estimate_rate(rec, 'cum_cost'):.3f}")

mesh = rec.history[-1].mesh
u = solve_discrete(mesh, spec, tol=1e-12)
rng = np.random.default_rng(0)
ratios = []
for _ in range(20):
    v = random_function(mesh, rng, 0.5)
    ratios.append(energy_norm(mesh, spec, u - zarantonello_step(mesh, spec, v))
                  / energy_norm(mesh, spec, u - v))
print(f"measured contraction on {mesh.num_free_dofs} dofs: max {max(ratios):.4f} <= {q:.4f}")
