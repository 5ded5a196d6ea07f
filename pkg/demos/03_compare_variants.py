# %% [markdown]
# # Three training recipes on CalcChain
#
# ``grpo`` learns from every trajectory with std-normalised advantages.
# ``drbot`` adds the stabilising tricks and the trajectory filters.
# ``spear`` adds self-imitation replay and the two curricula on top.
# A short run is enough to see the shape; the acceptance suite uses 500
# steps and five seeds.

# %%
import numpy as np

from spearlab.config import TrainConfig
from spearlab.harness import format_compare_table, run_compare

config = TrainConfig(num_steps=150)
records = run_compare(config, ["grpo", "drbot", "spear"], [0, 1])
print(format_compare_table(records), end="")

# %% [markdown]
# Training success rate along the run (mean over seeds, every 25 steps).

# %%
series = {}
for r in records:
    if r["kind"] == "run" and r["status"] == "ok":
        series.setdefault(r["variant"], []).append(r["success_series"])
for variant, runs in sorted(series.items()):
    mean = np.mean(runs, axis=0)
    print(f"{variant:6s}", " ".join(f"{x:.2f}" for x in mean[::25]))

# %% [markdown]
# ## Inspecting one run
#
# A single spear run with its metric stream: how full the replay buffer gets
# and how many trajectories the filters drop.

# %%
from spearlab.trainer import Trainer

trainer = Trainer(TrainConfig(num_steps=60, seed=0))
for rec in trainer.train():
    if rec.step % 10 == 0:
        print(f"step {rec.step:3d} {rec.branch:9s} fill={rec.replay_fill:.2f} "
              f"masked={rec.masked_trajectories:3d}/128 entropy={rec.entropy:.2f}")
