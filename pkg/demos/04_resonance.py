"""Sweeping the frequency across a Dirichlet eigenvalue.

The first Dirichlet eigenvalue of the unit square is 2 pi^2, so omega
near pi sqrt(2) makes the problem nearly singular.  The discrete stability
constant collapses there, the approximation factor blows up, and the
solver raises its near-singularity flag instead of returning a silent
answer.
"""
import numpy as np

from helmdg.studies import StudyConfig, run_stability_sweep

w0 = np.pi * np.sqrt(2)
omegas = tuple(float(w0 + 0.2 * k) for k in range(-3, 4))
rec = run_stability_sweep(StudyConfig(case="smooth_source", boundary="D", n=6, p=2, omega=w0, omegas=omegas,
                                      factors=True, kind="stability_sweep"))
print(f"{'omega':>8} {'stability':>10} {'gamma_ba':>10} {'flagged':>8}")
for row in rec.rows:
    print(f"{row['omega']:8.4f} {row['stability']:10.3e} {row['gamma_ba']:10.3e} {str(row['near_singular']):>8}")
