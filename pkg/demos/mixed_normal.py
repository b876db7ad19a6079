"""
Random information and studentization
=====================================

The synthetic LAQ model draws its information Gamma at random, so u_hat is
mixed normal rather than normal. Multiplying by sqrt(Gamma_T(theta_hat))
should undo the mixing. With the sin perturbation switched on, the score
carries a bias of 5 kappa b^(gamma - 1/2), which decays slowly.
"""
import math

import numpy as np
from scipy import stats

from qla import LocalChart, ModelSpec, gamma_at, qmle
from qla.verification.probes import sample_stream


def studentized(kappa, b, reps=1000, seed=0):
    spec = ModelSpec("synthetic-laq", horizon=b, extras={"kappa": kappa})
    raw, stud = [], []
    for k in range(reps):
        s = spec.simulate(sample_stream(seed, b, k))
        th, _ = qmle(s)
        chart = LocalChart(s, np.array([[b ** -0.5]]))
        u = (th[0] - spec.theta_star) * math.sqrt(b)
        raw.append(u)
        stud.append(math.sqrt(gamma_at(chart, th)[0, 0]) * u)
    return np.array(raw), np.array(stud)


for kappa in (0.0, 0.5):
    raw, stud = studentized(kappa, 1e4)
    ks_raw = stats.kstest(raw, "norm").statistic
    ks_stud = stats.kstest(stud, "norm").statistic
    print(f"kappa={kappa}:  KS raw {ks_raw:.3f}   KS studentized {ks_stud:.3f}   "
          f"kurtosis raw {stats.kurtosis(raw):.2f}")

#%%
# the bias term against b; it only drops below ~0.05 for b in the millions
for b in (1e4, 1e5, 1e6, 1e7):
    print(f"b = {b:.0e}:  5 kappa b^(-1/4) = {5 * 0.5 * b ** -0.25:.4f}")
