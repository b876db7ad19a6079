"""
OU drift: estimating a mean-reversion rate
==========================================

A walk through the pieces on the Ornstein-Uhlenbeck model
dX = -theta X dt + dW, observed on a fine grid up to time T.
The contrast is the continuous-time log-likelihood, which is quadratic in
theta, so the QMLE has a closed form we can compare against.
"""
import math

import numpy as np

from qla import LocalChart, ModelSpec, delta, gamma_at, qmle, qbe, uniform_prior
from qla.verification.probes import sample_stream

# one path at T = 400, true rate 1
T = 400.0
spec = ModelSpec("ou-drift", theta_star=1.0, horizon=T, mesh=0.01)
sample = spec.simulate(sample_stream(0, T, 0))
print("path length:", sample.extras["path"].shape[0] if "path" in sample.extras else "not kept")

# sufficient statistics S1 = int X dX, S2 = int X^2 dt
s1, s2 = sample.extras["S1"], sample.extras["S2"]
print(f"S1 = {s1:.3f}   S2 = {s2:.3f}   S2/T = {s2 / T:.4f} (limit 0.5)")

#%%
# The field is  H(theta) = -theta S1 - theta^2 S2 / 2, maximized at -S1/S2.
theta_m, at_edge = qmle(sample)
print(f"QMLE {theta_m[0]:.6f}   vertex {-s1 / s2:.6f}   boundary hit: {at_edge}")

theta_b, qerr = qbe(sample, uniform_prior(spec.space))
print(f"QBE  {theta_b[0]:.6f}   quadrature self-check {qerr:.1e}")

#%%
# Localize with a_T = T^(-1/2): the score and information in u-coordinates.
a = np.array([[T ** -0.5]])
chart = LocalChart(sample, a)
d = delta(chart)[0]
g = gamma_at(chart, chart.theta_star)[0, 0]
u_hat = (theta_m[0] - 1.0) * math.sqrt(T)
print(f"Delta_T = {d:.4f}   Gamma_T = {g:.4f}   u_hat = {u_hat:.4f}   Delta/Gamma = {d / g:.4f}")

#%%
# Over many replicates sqrt(T)(theta_hat - 1) should look like N(0, 2).
errs = []
for k in range(300):
    s = spec.simulate(sample_stream(0, T, k), keep_path=False)
    errs.append(math.sqrt(T) * (qmle(s)[0][0] - 1.0))
errs = np.array(errs)
print(f"mean {errs.mean():+.3f}   sd {errs.std(ddof=1):.3f}   (sqrt 2 = {math.sqrt(2):.3f})")
