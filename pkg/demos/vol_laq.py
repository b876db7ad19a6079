"""
Volatility contrast: the LAQ picture in practice
================================================

Discretely observed diffusion with unknown log-volatility. Here the field is
not quadratic, and we look at how fast it becomes so: the LAQ remainder,
the gap between QMLE and QBE, and the tail probability of the
likelihood ratio.
"""
import numpy as np

from qla import LocalChart, ModelSpec, ScalingSchedule, gamma_at, laq_remainder
from qla.verification import default_profile, mle_bayes_gap_probe, pld_tail_probe
from qla.verification.probes import sample_stream

spec = ModelSpec("vol-contrast")
limits = spec.limits()
print("limit information Gamma =", limits.gamma.ravel(), " chi0 =", round(limits.chi0, 4))

#%%
# remainder r_T(u) at a few u for growing n
us = [-2.0, -1.0, 0.5, 1.5]
for n in (100, 400, 1600, 6400):
    s = spec.with_horizon(n).simulate(sample_stream(1, n, 0), keep_path=False)
    chart = LocalChart(s, np.array([[n ** -0.5]]))
    g = gamma_at(chart, chart.theta_star)
    r = [laq_remainder(chart, [u], g) for u in us]
    print(f"n={n:5d}  r_T(u) =", " ".join(f"{x:+.4f}" for x in r))

#%%
# QMLE and QBE agree to first order; their gap in u shrinks like n^(-1/2).
sched = ScalingSchedule([100, 400, 1600])
gap = mle_bayes_gap_probe(spec, sched, reps=500, seed=1)
for row in gap.sub("gap").grid:
    print(f"n = {row.x:5.0f}   median |u_B - u_M| = {row.estimate:.4f}  (se {row.stderr:.4f})")

#%%
# P(sup over |u| >= r of log Z >= -r^(1-beta1)) falls off fast in r.
pld = pld_tail_probe(spec, ScalingSchedule([400]), default_profile(), reps=1000, seed=1)
sub = pld.subreports[0]
for row in sub.grid:
    print(f"r = {row.x:.0f}   P_hat = {row.estimate:.4f}")
print("fitted slope:", sub.details["slope"], " verdict:", pld.verdict)
