"""A semi-synthetic world with latent surrogates.

Treatment moves some short-term variables. A few of them are observed
surrogates. Others stay latent and only show up through noisy proxies. The
long-term outcome depends on all surrogates and the covariates. Because both
potential outcomes are simulated, the true effect is known.
"""

# %%
import numpy as np

from laser.data import GenConfig, check_overlap, generate_world

cfg = GenConfig(n_latent=3, n_obs_surr=2, n_proxies=3, seed=7)
d_obs, d_exp, tau = generate_world(cfg)

print("observational units:", len(d_obs), " experimental units:", len(d_exp))
print("covariates:", d_obs.d_x, " short-term columns m = [s_o, p]:", d_obs.d_m)
print("true ATE on the experimental units: %.3f" % tau)

# %%
# The observational sample is confounded (treatment depends on x); the
# experiment is randomized. Long-term y exists only in the observational data.
print("treated share, observational: %.2f  experimental: %.2f" % (d_obs.t.mean(), d_exp.t.mean()))
print("sd of y in D_obs: %.2f" % d_obs.y.std())

# %%
# Shared noise between the arms means y1 - y0 depends on x alone.
effect = d_exp.y1 - d_exp.y0
print("unit effects: min %.2f  median %.2f  max %.2f" % (effect.min(), np.median(effect), effect.max()))

# %%
# IPW needs both arms in every covariate region.
report = check_overlap(d_exp)
print("overlap cells checked:", len(report.cells), " flagged:", len(report.flagged))
