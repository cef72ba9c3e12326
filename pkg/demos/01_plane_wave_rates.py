"""Plane wave on the Robin square: convergence rates and quasi-optimality.

The exact solution is a plane wave, so the energy error of the IPDG
solution can be measured directly.  For degree p it should fall like h^p,
and it should stay within a fixed factor of the best conforming
approximation on the same mesh.

The preset square mesh uses a different diagonal pattern from its bisected
refinements, so the first refinement step also changes the element shapes
and shows a rate above p.  Starting from a once-bisected preset keeps all
meshes in one refinement family and the fitted slope then sits at p.
"""
import os
import tempfile

from helmdg.coefficients import CoefficientSet
from helmdg.mesh import uniform_refine, write_mesh
from helmdg.solver import manufactured
from helmdg.studies import StudyConfig, fit_slope, run_uniform_study

base = os.path.join(tempfile.mkdtemp(), "base.mesh")
write_mesh(uniform_refine(manufactured("plane_wave", CoefficientSet(omega=5.0)).mesh(2), 1), base)

for p in (1, 2):
    rec = run_uniform_study(StudyConfig(case="plane_wave", domain="file", mesh_file=base, omega=5.0, p=p,
                                        levels=4))
    print(f"degree {p}")
    print(f"  {'h':>8} {'dofs':>7} {'error':>10} {'error/best':>10}")
    for row in rec.rows:
        print(f"  {row['h']:8.4f} {row['dofs']:7d} {row['energy_error']:10.3e} "
              f"{row['energy_error'] / row['best_error']:10.3f}")
    print(f"  fitted slope {fit_slope(rec.column('h'), rec.column('energy_error')):.3f} (expected {p})\n")
