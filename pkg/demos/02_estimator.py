"""The residual estimator on a smooth problem.

eta bounds the error once it is scaled by sqrt(1 + gamma_ba^2), where
gamma_ba is the sampled approximation factor.  Under refinement the scaled
effectivity settles into a narrow band, and the data oscillation decays
one order faster than eta itself.
"""
import numpy as np

from helmdg.studies import StudyConfig, fit_slope, run_uniform_study

rec = run_uniform_study(StudyConfig(case="smooth_source", boundary="D", omega=2.0, p=1, n=4, levels=3,
                                    factors=True))
eff = rec.column("eta") * np.sqrt(1 + rec.column("gamma_ba") ** 2) / rec.column("energy_error")
print(f"{'h':>8} {'error':>10} {'eta':>10} {'gamma_ba':>9} {'scaled eff.':>11}")
for row, e in zip(rec.rows, eff):
    print(f"{row['h']:8.4f} {row['energy_error']:10.3e} {row['eta']:10.3e} {row['gamma_ba']:9.3f} {e:11.2f}")
print(f"eta slope {fit_slope(rec.column('h'), rec.column('eta')):.2f}, "
      f"error slope {fit_slope(rec.column('h'), rec.column('energy_error')):.2f}")
