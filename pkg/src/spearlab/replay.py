"""Self-imitation replay buffer with the positive-advantage admission gate."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .advantage import percentile_nearest_rank, BaselineBuffer
from .errors import ContractViolation

__all__ = ["StoredTrajectory", "ReplayBuffer"]


@dataclass(frozen=True)
class StoredTrajectory:
    states: np.ndarray
    actions: np.ndarray
    behavior_logp: np.ndarray
    reward_total: float
    adv_at_store: float
    collected_at_step: int
    loss_mask: np.ndarray
    task_seed: int = 0

    def __post_init__(self):
        for name in ("states", "actions", "behavior_logp", "loss_mask"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        lp = self.behavior_logp
        if not (np.all(np.isfinite(lp)) and np.all(lp <= 0.0)):
            raise ContractViolation("behaviour log-probs must be finite and <= 0")

    @classmethod
    def from_trajectory(cls, traj, advantage: float, step: int) -> "StoredTrajectory":
        return cls(
            states=traj.states,
            actions=traj.actions,
            behavior_logp=traj.behavior_logp,
            reward_total=float(traj.reward.total),
            adv_at_store=float(advantage),
            collected_at_step=int(step),
            loss_mask=traj.learnable(),
            task_seed=traj.task_seed,
        )

    def learnable(self) -> np.ndarray:
        return self.loss_mask


class ReplayBuffer:
    """Capacity-bounded store of trajectories whose advantage was positive."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractViolation(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.entries: list[StoredTrajectory] = []
        self.admissions_since_drain = 0

    def __len__(self):
        return len(self.entries)

    def is_full(self) -> bool:
        return len(self.entries) >= self.capacity

    @property
    def fill(self) -> float:
        return len(self.entries) / self.capacity

    def maybe_store(self, traj, advantage: float, step: int = 0) -> bool:
        if self.is_full():
            raise ContractViolation("storing into a full replay buffer; drain it first")
        if not advantage > 0.0:
            return False
        entry = traj if isinstance(traj, StoredTrajectory) else \
            StoredTrajectory.from_trajectory(traj, advantage, step)
        self.entries.append(entry)
        self.admissions_since_drain += 1
        return True

    def admit_batch(self, candidates: Sequence, step: int) -> int:
        """Admit ``(trajectory, advantage)`` pairs in order until capacity is reached."""
        stored = 0
        for traj, adv in candidates:
            if self.is_full():
                break
            stored += self.maybe_store(traj, adv, step)
        return stored

    def refilter(self, baseline: BaselineBuffer | np.ndarray,
                 q: float = 50.0) -> list[tuple[StoredTrajectory, float]]:
        """Entries whose recalibrated advantage ``R - P_q(baseline)`` is positive."""
        values = baseline.values() if isinstance(baseline, BaselineBuffer) else baseline
        floor = percentile_nearest_rank(values, q)
        kept = []
        for e in self.entries:
            adv = e.reward_total - floor
            if adv > 0.0:
                kept.append((e, adv))
        return kept

    def drain(self) -> "ReplayBuffer":
        self.entries = []
        self.admissions_since_drain = 0
        return self

    def dump_jsonl(self, path):
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps({
                    "task_seed": e.task_seed,
                    "states": e.states.tolist(),
                    "actions": e.actions.tolist(),
                    "behavior_logp": e.behavior_logp.tolist(),
                    "reward_total": e.reward_total,
                    "adv_at_store": e.adv_at_store,
                    "collected_at_step": e.collected_at_step,
                    "loss_mask": e.loss_mask.tolist(),
                }) + "\n")
