#!/usr/bin/env python3
"""Newest vertex bisection on the L-shape.

Marks the elements touching the reentrant corner a few times, prints the
closure cost and the minimum angle, and writes the meshes in the text format.

    python demos/mesh_refinement.py [outdir]
"""
import os
import sys

import numpy as np

from afem.mesh import check_conforming, make_initial_mesh, min_angle, refine_nvb, write_mesh

out = sys.argv[1] if len(sys.argv) > 1 else "demo_meshes"
os.makedirs(out, exist_ok=True)

mesh = make_initial_mesh("l_shape")
print(f"{'level':>5} {'elements':>9} {'marked':>7} {'refined':>8} {'min angle':>10}")
for level in range(12):
    # elements with a vertex at the reentrant corner (the origin)
    at_corner = np.any(np.all(mesh.vertices[mesh.elements] == 0.0, axis=2), axis=1)
    marked = np.flatnonzero(at_corner)
    fine, rel = refine_nvb(mesh, marked)
    check_conforming(fine)
    print(f"{level:>5} {mesh.num_elements:>9} {len(marked):>7} {int(rel.refined.sum()):>8} "
          f"{np.degrees(min_angle(mesh)):>9.2f}d")
    write_mesh(mesh, os.path.join(out, f"corner_{level:02d}.txt"))
    mesh = fine
print(f"meshes written to {out}/")
