# %% [markdown]
# # Objective pieces
#
# The clipped surrogate, its dual-clip floor, the covariance mask and the two
# schedules, evaluated on small inputs.

# %%
import numpy as np

from spearlab import rewards
from spearlab.objectives import clipped_surrogate, select_clip_mask, token_covariance
from spearlab.policy import substream

for r, A in [(1.5, 1.0), (0.5, 1.0), (0.5, -1.0), (1.5, -1.0), (20.0, -1.0)]:
    print(f"r={r:5.2f} A={A:+.1f} -> {clipped_surrogate(r, A, 0.2, 0.28, 10.0):+.3f}")

# %% [markdown]
# Positive advantages stop gaining above 1.28.  Negative advantages are
# floored at C*A = -10 however large the ratio gets.

# %%
r = np.linspace(0.01, 25, 6)
print(np.round(clipped_surrogate(r, -1.0, 0.2, 0.28, 10.0), 3))
print(np.round(clipped_surrogate(r, -1.0, 0.2, 0.28, None), 3))

# %% [markdown]
# ## Covariance clipping
#
# Tokens that are already likely *and* carry a large advantage have a large
# positive covariance.  A small random budget of those tokens is removed
# from the self-imitation loss to slow the collapse of entropy.

# %%
rng = np.random.default_rng(0)
logp = np.log(rng.uniform(0.05, 1.0, size=200))
adv = rng.uniform(0.0, 2.0, size=200)
cov = token_covariance(logp, adv)
mask = select_clip_mask(cov, 0.05, 40.0, 0.02, substream(0, 2))
print("in band:", int(np.sum((cov >= 0.05) & (cov <= 40))), " masked:", int(np.sum(mask == 0)))
print("masked covariances:", np.round(cov[mask == 0], 3))

# %% [markdown]
# ## Schedules
#
# The replay weight warms up while the tool-call bonus fades.

# %%
for t in range(0, 301, 50):
    print(f"t={t:3d} gamma={rewards.gamma(t, 100):.3f} mu={rewards.mu(t, 200):.3f}")
