# %% [markdown]
# # The two tool environments
#
# Both environments are small enough to enumerate.  Every reachable state
# gets a row in the tabular policy, so a learned policy can be inspected
# state by state.

# %%
import numpy as np

from spearlab.env import make_env, shortest_solution

calc = make_env("calc_chain")
door = make_env("key_door")
print(calc)
print(door)

# %% [markdown]
# A CalcChain episode: reach the target with arithmetic calls, then submit.
# Seed 3 asks for 8.

# %%
s = calc.reset(3)
for a in shortest_solution(calc, 3):
    out = calc.step(s, a)
    print(f"{calc.action_names[a]:8s} -> {calc.raw_state(out.next_state)}  done={out.done} success={out.success}")
    s = out.next_state

# %% [markdown]
# ## How hard is exploration from a uniform start?
#
# Half of the action table is malformed.  A trajectory with a malformed turn
# is dropped from the loss when the trajectory filters are on, so early
# learning relies on the rare episodes that are clean from start to finish.
# Exact forward propagation of probability mass gives both rates.

# %%
def success_probability(env, seed, probs, clean_only):
    mass = {env.reset(seed).state_index: 1.0}
    won = 0.0
    for _ in range(env.max_turns):
        nxt = {}
        for s, m in mass.items():
            for a, pa in enumerate(probs):
                if pa == 0 or (clean_only and not env.tool_valid_table[s, a]):
                    continue
                if env.success_table[s, a]:
                    won += m * pa
                else:
                    n = env.next_index[s, a]
                    nxt[n] = nxt.get(n, 0.0) + m * pa
        mass = nxt
    return won


uniform = np.full(10, 0.1)
for seed in range(11):
    p_any = success_probability(calc, seed, uniform, clean_only=False)
    p_clean = success_probability(calc, seed, uniform, clean_only=True)
    print(f"target {calc.target_for(seed):2d}: P(success)={p_any:.1e}  P(clean success)={p_clean:.1e}")

# %% [markdown]
# With 16 tasks x 8 samples x 500 steps each target is tried about 5800
# times, so targets above 10 expect less than one clean success over a
# whole run.  On KeyDoor a 30-turn episode is clean with probability about
# 2^-30.
