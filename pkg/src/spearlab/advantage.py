"""Group-relative advantages, the FIFO baseline buffer and median recalibration."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation, DegenerateGroupError

__all__ = [
    "GroupBatch",
    "BaselineBuffer",
    "group_advantage",
    "push_baseline",
    "percentile_nearest_rank",
    "p50",
    "recalibrate",
]


@dataclass
class GroupBatch:
    task_seed: int
    trajectories: list
    rewards: np.ndarray
    advantages: np.ndarray
    reward_std: float

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards))


def group_advantage(rewards: Sequence[float], normalize_by_std: bool = False) -> np.ndarray:
    """``R_i - mean(R)``, optionally divided by the population std of the group."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ContractViolation(f"a group needs at least 2 rewards, got {r.size}")
    adv = r - r.mean()
    if normalize_by_std:
        std = float(r.std())
        if std == 0.0:
            raise DegenerateGroupError("std normalization of a constant-reward group")
        adv = adv / std
    return adv


@dataclass
class BaselineBuffer:
    """FIFO of intra-group mean rewards with a fixed capacity."""

    capacity: int
    entries: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ContractViolation(f"baseline buffer capacity must be >= 1, got {self.capacity}")
        self.entries = deque(self.entries)

    def __len__(self):
        return len(self.entries)

    def push(self, value: float):
        self.entries.append(float(value))
        while len(self.entries) > self.capacity:
            self.entries.popleft()

    def extend(self, values: Iterable[float]):
        for v in values:
            self.push(v)

    def values(self) -> np.ndarray:
        return np.fromiter(self.entries, dtype=np.float64, count=len(self.entries))


def push_baseline(buffer: BaselineBuffer, group_mean: float) -> BaselineBuffer:
    buffer.push(group_mean)
    return buffer


def percentile_nearest_rank(values, q: float = 50.0) -> float:
    """Nearest-rank percentile: the ``ceil(q/100 * n)``-th smallest value.

    For ``q=50`` this is the lower median.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ContractViolation("percentile of an empty buffer")
    if not 0.0 < q <= 100.0:
        raise ContractViolation(f"percentile must lie in (0, 100], got {q}")
    return float(np.percentile(v, q, method="inverted_cdf"))


def p50(buffer) -> float:
    values = buffer.values() if isinstance(buffer, BaselineBuffer) else buffer
    return percentile_nearest_rank(values, 50.0)


def recalibrate(reward: float, buffer, q: float = 50.0) -> float:
    values = buffer.values() if isinstance(buffer, BaselineBuffer) else buffer
    return float(reward) - percentile_nearest_rank(values, q)
