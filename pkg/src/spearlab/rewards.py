"""Composite trajectory reward and the two cosine curricula."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .errors import ContractViolation

__all__ = [
    "RewardBreakdown",
    "outcome_reward",
    "tool_call_reward",
    "format_reward",
    "gamma",
    "mu",
    "compose",
]

FORMAT_BONUS = 0.1


@dataclass(frozen=True)
class RewardBreakdown:
    outcome: float
    tool_call: float
    format: float
    mu: float
    total: float


def outcome_reward(success: bool) -> float:
    return 1.0 if success else -1.0


def tool_call_reward(n_tool_call: int) -> float:
    if n_tool_call < 0:
        raise ContractViolation(f"n_tool_call must be non-negative, got {n_tool_call}")
    return min(1.0, 0.1 * n_tool_call)


def format_reward(well_formed: Iterable[bool]) -> float:
    # an empty trajectory is vacuously well formed
    return FORMAT_BONUS if all(bool(w) for w in well_formed) else 0.0


def gamma(t_iter: float, T_warmup: int) -> float:
    """Self-imitation weight: rises from 0 to 1 over ``T_warmup`` steps."""
    if t_iter < 0:
        raise ContractViolation("t_iter must be >= 0")
    if t_iter <= T_warmup:
        return 0.5 * (1.0 - math.cos(math.pi * t_iter / T_warmup))
    return 1.0


def mu(t_iter: float, T_decay: int) -> float:
    """Tool-call reward weight: falls from 1 to 0 over ``T_decay`` steps."""
    if t_iter < 0:
        raise ContractViolation("t_iter must be >= 0")
    if t_iter <= T_decay:
        return 0.5 * (math.cos(math.pi * t_iter / T_decay) + 1.0)
    return 0.0


def compose(outcome: float, tool_call: float, format: float, mu: float) -> RewardBreakdown:
    if not 0.0 <= mu <= 1.0:
        raise ContractViolation(f"mu must lie in [0, 1], got {mu}")
    return RewardBreakdown(outcome, tool_call, format, mu, outcome + mu * tool_call + format)
