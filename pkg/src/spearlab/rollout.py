"""Trajectory container and batched rollouts against a frozen policy snapshot."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import ToolEnv
from .policy import log_softmax_rows, softmax_rows, sample_from_uniform, substream
from .rewards import RewardBreakdown, compose, format_reward, outcome_reward, tool_call_reward

__all__ = ["Trajectory", "rollout_groups", "score", "ROLLOUT_STREAM"]

# substream tags; the first key component after the run seed
ROLLOUT_STREAM = 0
TASK_STREAM = 1
CLIP_STREAM = 2


@dataclass
class Trajectory:
    task_seed: int
    states: np.ndarray           # state index per turn
    actions: np.ndarray
    behavior_logp: np.ndarray
    well_formed: np.ndarray
    tool_call_valid: np.ndarray
    success: bool
    traj_id: int = 0
    reward: RewardBreakdown | None = None
    advantage: float = 0.0
    loss_mask: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.actions)

    @property
    def n_tool_call(self) -> int:
        return int(np.count_nonzero(self.tool_call_valid))

    @property
    def total_reward(self) -> float:
        return self.reward.total

    def learnable(self) -> np.ndarray:
        if self.loss_mask is None:
            return np.ones(len(self), dtype=bool)
        return self.loss_mask


def score(traj: Trajectory, mu_t: float) -> RewardBreakdown:
    return compose(
        outcome_reward(traj.success),
        tool_call_reward(traj.n_tool_call),
        format_reward(traj.well_formed),
        mu_t,
    )


def rollout_groups(env: ToolEnv, policy, task_seeds: Sequence[int], G: int,
                   run_seed: int, step: int) -> list[list[Trajectory]]:
    """Roll out ``G`` trajectories per task seed, all episodes advanced in lockstep.

    Trajectory ``i`` of group ``g`` draws its uniforms from substream
    ``(ROLLOUT_STREAM, step, g, i)`` of ``run_seed``; turn ``t`` consumes the
    ``t``-th uniform of that stream, exactly as repeated calls to
    :func:`spearlab.policy.sample_action` would.
    """
    n = len(task_seeds) * G
    T = env.max_turns
    u = np.empty((n, T))
    cur = np.empty(n, dtype=np.int64)
    for g, seed in enumerate(task_seeds):
        start = env.reset(seed).state_index
        for i in range(G):
            u[g * G + i] = substream(run_seed, ROLLOUT_STREAM, step, g, i).random(T)
            cur[g * G + i] = start

    states = np.zeros((n, T), dtype=np.int64)
    actions = np.zeros((n, T), dtype=np.int64)
    logp = np.zeros((n, T))
    lengths = np.full(n, T, dtype=np.int64)
    success = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    logits = policy.logits
    for t in range(T):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        s = cur[idx]
        rows = logits[s]
        a = sample_from_uniform(softmax_rows(rows), u[idx, t])
        states[idx, t] = s
        actions[idx, t] = a
        logp[idx, t] = log_softmax_rows(rows)[np.arange(idx.size), a]
        won = env.success_table[s, a]
        ended = won | env.failed_table[s, a]
        cur[idx] = env.next_index[s, a]
        success[idx] = won
        finished = idx[ended]
        lengths[finished] = t + 1
        active[finished] = False

    groups = []
    for g, seed in enumerate(task_seeds):
        group = []
        for i in range(G):
            k = g * G + i
            L = lengths[k]
            st, ac = states[k, :L].copy(), actions[k, :L].copy()
            group.append(Trajectory(
                task_seed=int(seed),
                states=st,
                actions=ac,
                behavior_logp=logp[k, :L].copy(),
                well_formed=env.well_formed_table[st, ac].copy(),
                tool_call_valid=env.tool_valid_table[st, ac].copy(),
                success=bool(success[k]),
                traj_id=k,
            ))
        groups.append(group)
    return groups
