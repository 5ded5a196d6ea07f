"""Tabular softmax policy: one row of logits per enumerated state."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import EnvState
from .errors import ContractViolation, NumericError

__all__ = [
    "PolicyParams",
    "PolicySnapshot",
    "substream",
    "softmax_rows",
    "log_softmax_rows",
    "action_distribution",
    "log_prob",
    "grad_log_prob",
    "sample_action",
    "sample_from_uniform",
    "batch_entropy",
]


@dataclass
class PolicyParams:
    logits: np.ndarray
    version: int = 0

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ContractViolation(f"logits must be 2-D, got shape {self.logits.shape}")

    @classmethod
    def zeros(cls, state_count: int, action_count: int) -> "PolicyParams":
        return cls(np.zeros((state_count, action_count)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape

    def snapshot(self) -> "PolicySnapshot":
        return PolicySnapshot(self.logits, self.version)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.logits.copy(), self.version)


@dataclass(frozen=True)
class PolicySnapshot:
    """Read-only copy of the parameters, taken before a rollout phase."""

    logits: np.ndarray = field(repr=False)
    version: int = 0

    def __post_init__(self):
        frozen = np.array(self.logits, dtype=np.float64, copy=True)
        frozen.setflags(write=False)
        object.__setattr__(self, "logits", frozen)

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape


def substream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream ``key`` of ``seed``.

    Same seed and key always give the same draws, independent of how many
    other substreams were consumed.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _row_index(state) -> int:
    return state.state_index if isinstance(state, EnvState) else int(state)


def _check_finite(rows: np.ndarray):
    if not np.all(np.isfinite(rows)):
        raise NumericError("non-finite logits")


def softmax_rows(rows: np.ndarray) -> np.ndarray:
    """Max-shifted softmax along the last axis."""
    z = rows - rows.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(rows: np.ndarray) -> np.ndarray:
    m = rows.max(axis=-1, keepdims=True)
    z = rows - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def action_distribution(params, state) -> np.ndarray:
    row = params.logits[_row_index(state)]
    _check_finite(row)
    return softmax_rows(row)


def log_prob(params, state, action: int) -> float:
    row = params.logits[_row_index(state)]
    _check_finite(row)
    return float(log_softmax_rows(row)[int(action)])


def grad_log_prob(params, state, action: int) -> tuple[int, np.ndarray]:
    """Gradient of ``log pi(action|state)`` w.r.t. the logits.

    Only the row of ``state`` is non-zero, so the result is returned as
    ``(row_index, row_gradient)`` with ``row_gradient[b] = 1{b == action} - pi(b|state)``.
    """
    s = _row_index(state)
    g = -action_distribution(params, s)
    g[int(action)] += 1.0
    return s, g


def sample_from_uniform(probs: np.ndarray, u) -> np.ndarray:
    """Inverse-CDF draw over the last axis; ``u`` has the leading shape of ``probs``."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf <= np.expand_dims(u, -1)).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def sample_action(params, state, rng: np.random.Generator) -> tuple[int, float]:
    probs = action_distribution(params, state)
    a = int(sample_from_uniform(probs, rng.random()))
    return a, log_prob(params, state, a)


def batch_entropy(trajectories: Sequence, params=None) -> float:
    """Sequence-mean of summed negative log-probs of the actions taken.

    With ``params`` the log-probs are recomputed; without, the behaviour
    log-probs stored on each trajectory are used.
    """
    if len(trajectories) == 0:
        raise ContractViolation("entropy of an empty batch")
    total = 0.0
    for traj in trajectories:
        if params is None:
            lp = np.asarray(traj.behavior_logp, dtype=np.float64)
        else:
            rows = params.logits[np.asarray(traj.states, dtype=np.int64)]
            _check_finite(rows)
            lp = log_softmax_rows(rows)[np.arange(len(rows)), np.asarray(traj.actions, dtype=np.int64)]
        total += -float(lp.sum())
    return total / len(trajectories)
