#!/usr/bin/env python3
"""Estimator against dofs and against cumulative cost for several theta.

Writes the traces, a rates table and the log-log figures through the sweep
harness used by ``afem run``.

    python demos/rates_vs_cost.py [outdir]
"""
import csv
import os
import sys

from afem.experiments import ExperimentManifest, run_sweep

out = sys.argv[1] if len(sys.argv) > 1 else "demo_rates"
manifest = ExperimentManifest(problem="poisson_linear", geometry="l_shape",
                              theta=(0.1, 0.5, 0.9, 1.0), lambda_=(1e-2,),
                              max_dofs=20000, output_dir=out)
run_sweep(manifest)
with open(os.path.join(out, "rates.csv")) as fh:
    for row in csv.DictReader(fh):
        print(f"theta={row['theta']:>4}: slope vs dofs {float(row['slope_vs_dofs']):+.3f}, "
              f"vs cost {float(row['slope_vs_cost']):+.3f}, {row['total_steps']} solver steps")
print(f"plots and traces in {out}/ (theta = 1 marks every element)")
