"""Per-token objective pieces: ratios, the clipped surrogate, covariance masking, filters.

Everything here is a pure function of its inputs.  The surrogate is written
as a function of the current log-probability so the analytic gradient w.r.t.
the logits is ``coef * (onehot(a) - pi(.|s))`` with ``coef`` from
:func:`surrogate_logp_grad`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation
from .policy import log_softmax_rows, softmax_rows

__all__ = [
    "LOG_RATIO_CAP",
    "importance_ratio",
    "clipped_surrogate",
    "surrogate_logp_grad",
    "TokenBatch",
    "token_batch",
    "token_covariance",
    "round_half_up",
    "select_clip_mask",
    "filter_void_and_overlong",
    "filter_low_variance_groups",
    "kl_estimator",
    "kl_metric",
]

# ratios above exp(LOG_RATIO_CAP) are capped and counted
LOG_RATIO_CAP = 50.0


def importance_ratio(current_logp, behavior_logp):
    """``exp(current - behavior)`` with overflow capping.

    Returns ``(ratio, n_capped)``; works on scalars and arrays.
    """
    d = np.asarray(current_logp, dtype=np.float64) - np.asarray(behavior_logp, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ContractViolation("importance ratio of non-finite log-probs")
    capped = d > LOG_RATIO_CAP
    r = np.exp(np.minimum(d, LOG_RATIO_CAP))
    if r.ndim == 0:
        return float(r), int(capped)
    return r, int(np.count_nonzero(capped))


def clipped_surrogate(r, A, eps_lb: float, eps_ub: float, C: float | None = None):
    """``min(r*A, clip(r, 1-eps_lb, 1+eps_ub)*A)``, floored at ``C*A`` when ``A < 0``.

    ``C=None`` disables the dual-clip floor.
    """
    r = np.asarray(r, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    base = np.minimum(r * A, np.clip(r, 1.0 - eps_lb, 1.0 + eps_ub) * A)
    if C is not None:
        base = np.where(A < 0, np.maximum(base, C * np.minimum(A, 0.0)), base)
    return float(base) if base.ndim == 0 else base


def surrogate_logp_grad(r, A, eps_lb: float, eps_ub: float, C: float | None = None):
    """Derivative of :func:`clipped_surrogate` w.r.t. the current log-prob.

    ``r*A`` where the unclipped branch is the active one, else 0.
    """
    r = np.asarray(r, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    upper = r <= 1.0 + eps_ub
    lower = r >= 1.0 - eps_lb
    if C is not None:
        lower &= r <= C
    active = np.where(A >= 0, upper, lower)
    return np.where(active, r * A, 0.0)


@dataclass
class TokenBatch:
    """Learnable tokens of a set of trajectories, flattened in trajectory order."""

    seq: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    behavior_logp: np.ndarray
    advantage: np.ndarray
    n_seq: int
    seq_len: np.ndarray    # learnable tokens of the owning sequence, per token

    def __len__(self):
        return len(self.states)


def token_batch(items: Sequence, advantages: Sequence[float]) -> TokenBatch:
    """Collect learnable tokens; sequences without any are dropped entirely."""
    seq, st, ac, lp, adv, ln = [], [], [], [], [], []
    k = 0
    for item, a in zip(items, advantages):
        m = np.asarray(item.learnable(), dtype=bool)
        n = int(m.sum())
        if n == 0:
            continue
        seq.append(np.full(n, k, dtype=np.int64))
        st.append(np.asarray(item.states)[m])
        ac.append(np.asarray(item.actions)[m])
        lp.append(np.asarray(item.behavior_logp)[m])
        adv.append(np.full(n, float(a)))
        ln.append(np.full(n, n, dtype=np.int64))
        k += 1
    if k == 0:
        e_i, e_f = np.zeros(0, dtype=np.int64), np.zeros(0)
        return TokenBatch(e_i, e_i, e_i, e_f, e_f, 0, e_i)
    return TokenBatch(np.concatenate(seq), np.concatenate(st), np.concatenate(ac),
                      np.concatenate(lp), np.concatenate(adv), k, np.concatenate(ln))


def current_logp(logits: np.ndarray, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return log_softmax_rows(logits[states])[np.arange(len(states)), actions]


def token_covariance(logp: np.ndarray, adv: np.ndarray) -> np.ndarray:
    """Centered log-prob times centered advantage, centering over the whole batch."""
    logp = np.asarray(logp, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    if logp.size == 0:
        raise ContractViolation("covariance of an empty batch")
    return _centered(logp) * _centered(adv)


def _centered(x: np.ndarray) -> np.ndarray:
    # a constant vector centres to exact zeros; np.mean need not return the constant
    if x[0] == x.min() == x.max():
        return np.zeros_like(x)
    return x - x.mean()


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def select_clip_mask(covariances, omega_lb: float, omega_ub: float, lam: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Per-token loss mask: 0 for a uniform sample of in-band tokens, 1 elsewhere.

    The sample size is ``min(round(lam * N), #in-band)``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ContractViolation(f"clip ratio must lie in [0, 1], got {lam}")
    cov = np.asarray(covariances, dtype=np.float64)
    mask = np.ones(cov.size)
    eligible = np.flatnonzero((cov >= omega_lb) & (cov <= omega_ub))
    budget = min(round_half_up(lam * cov.size), eligible.size)
    if budget > 0:
        mask[rng.choice(eligible, size=budget, replace=False)] = 0.0
    return mask


def filter_void_and_overlong(trajectories: Sequence, max_response_turns: int) -> list[np.ndarray]:
    """Loss masks: all-False for trajectories with a void turn or more than
    ``max_response_turns`` turns, all-True otherwise.  One action is one turn,
    so a void turn is any turn whose action was not a valid tool call.
    """
    masks = []
    for traj in trajectories:
        n = len(traj.actions)
        void = not bool(np.all(traj.tool_call_valid))
        overlong = n > max_response_turns
        masks.append(np.full(n, not (void or overlong), dtype=bool))
    return masks


def filter_low_variance_groups(groups: Sequence, ratio: float) -> list:
    """Keep the ``ceil(ratio * n)`` groups with the largest reward std.

    Ties go to the lower task seed; the kept groups are returned in their
    original order.
    """
    if len(groups) == 0:
        raise ContractViolation("no groups to filter")
    if not 0.0 < ratio <= 1.0:
        raise ContractViolation(f"rollout_filter_ratio must lie in (0, 1], got {ratio}")
    keep = math.ceil(ratio * len(groups) - 1e-12)
    order = sorted(range(len(groups)), key=lambda i: (-groups[i].reward_std, groups[i].task_seed, i))
    kept = set(order[:keep])
    return [g for i, g in enumerate(groups) if i in kept]


def kl_estimator(ref_logp, cur_logp):
    """Per-token ``exp(ref - cur) - (ref - cur) - 1`` (non-negative)."""
    d = np.asarray(ref_logp, dtype=np.float64) - np.asarray(cur_logp, dtype=np.float64)
    return np.expm1(d) - d


def kl_metric(params, reference_params, trajectories: Sequence) -> float:
    """Token-mean of :func:`kl_estimator` at the actions taken; monitoring only."""
    if len(trajectories) == 0:
        raise ContractViolation("KL of an empty batch")
    states = np.concatenate([np.asarray(t.states, dtype=np.int64) for t in trajectories])
    actions = np.concatenate([np.asarray(t.actions, dtype=np.int64) for t in trajectories])
    if states.size == 0:
        return 0.0
    cur = current_logp(params.logits, states, actions)
    ref = current_logp(reference_params.logits, states, actions)
    return float(np.mean(kl_estimator(ref, cur)))


def score_gradient(logits: np.ndarray, states: np.ndarray, actions: np.ndarray,
                   coef: np.ndarray) -> np.ndarray:
    """``sum_t coef_t * grad log pi(a_t|s_t)`` as a dense logit-shaped array."""
    grad = np.zeros_like(logits)
    if states.size == 0:
        return grad
    rows = -softmax_rows(logits[states]) * coef[:, None]
    rows[np.arange(states.size), actions] += coef
    np.add.at(grad, states, rows)
    return grad
