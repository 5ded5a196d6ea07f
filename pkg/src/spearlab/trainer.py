"""The training loop: on-policy clipped update plus prioritized self-imitation.

One call to :meth:`Trainer.train_step` runs one iteration:

1. freeze a snapshot of the policy and roll out ``G`` trajectories for each
   task seed of the batch;
2. score them with the ``mu``-scheduled composite reward and compute group
   advantages;
3. push every group mean into the FIFO baseline buffer;
4. if the replay buffer is not yet full, admit positive-advantage
   trajectories and take the on-policy step; otherwise recalibrate the stored
   advantages against the buffer median, take the joint on-policy plus
   ``gamma``-weighted self-imitation step and empty the replay buffer.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rewards
from .advantage import BaselineBuffer, GroupBatch, group_advantage
from .config import TrainConfig
from .env import ToolEnv, make_env
from .errors import ContractViolation
from .objectives import (
    TokenBatch,
    current_logp,
    filter_low_variance_groups,
    filter_void_and_overlong,
    importance_ratio,
    kl_metric,
    score_gradient,
    select_clip_mask,
    surrogate_logp_grad,
    clipped_surrogate,
    token_batch,
    token_covariance,
    kl_estimator,
)
from .policy import PolicyParams, batch_entropy, substream
from .replay import ReplayBuffer
from .rollout import CLIP_STREAM, TASK_STREAM, rollout_groups, score

log = logging.getLogger(__name__)

__all__ = [
    "VariantFlags",
    "variant_flags",
    "UpdateStats",
    "MetricsRecord",
    "StepResult",
    "on_policy_update",
    "sil_update",
    "joint_update",
    "Trainer",
]


@dataclass(frozen=True)
class VariantFlags:
    std_norm: bool       # divide group advantages by the group std
    token_sum: bool      # sequence-mean of token sums; False gives per-sequence token means
    clip_higher: bool    # separate upper clip bound
    dual_clip: bool      # floor C*A for negative advantages
    filters: bool        # void-turn / over-long masks and low-variance group filter
    sil: bool            # replay buffer and self-imitation term
    curricula: bool      # mu-decayed tool-call reward and gamma warm-up


_VARIANTS = {
    "grpo": VariantFlags(std_norm=True, token_sum=False, clip_higher=False, dual_clip=False,
                         filters=False, sil=False, curricula=False),
    "drbot": VariantFlags(std_norm=False, token_sum=True, clip_higher=True, dual_clip=True,
                          filters=True, sil=False, curricula=False),
    "spear": VariantFlags(std_norm=False, token_sum=True, clip_higher=True, dual_clip=True,
                          filters=True, sil=True, curricula=True),
}


def variant_flags(config: TrainConfig) -> VariantFlags:
    flags = _VARIANTS[config.variant]
    if config.norm_adv_by_std_in_grpo is not None:
        flags = VariantFlags(**{**asdict(flags), "std_norm": config.norm_adv_by_std_in_grpo})
    return flags


@dataclass
class UpdateStats:
    objective: float = 0.0
    onpolicy_tokens: int = 0
    sil_samples: int = 0
    sil_tokens: int = 0
    clipped_tokens: int = 0
    ratio_overflow: int = 0
    noop_updates: int = 0
    masks: list = field(default_factory=list, repr=False)

    @property
    def clipped_token_fraction(self) -> float:
        return self.clipped_tokens / self.sil_tokens if self.sil_tokens else 0.0


@dataclass
class MetricsRecord:
    """One line of the metrics stream.

    ``step`` counts completed iterations (1 for the first), so after an
    interruption the last record's step equals the number of lines written.
    The schedules ``gamma_t`` and ``mu_t`` are evaluated at ``step - 1``.
    """

    step: int
    branch: str
    success_rate: float
    mean_total_reward: float
    entropy: float
    mean_n_tool_call: float
    replay_fill: float
    clipped_token_fraction: float
    gamma_t: float
    mu_t: float
    kl_metric: float
    ratio_overflow: int
    noop_updates: int
    groups_kept: int
    masked_trajectories: int
    onpolicy_tokens: int
    sil_samples: int
    sil_tokens: int
    wall_ms: float = 0.0

    def as_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_ms")
        return d


@dataclass
class StepResult:
    record: MetricsRecord
    groups: list
    kept_groups: list
    retained: list
    stats: UpdateStats
    snapshot: object


def _clip_bounds(config: TrainConfig, flags: VariantFlags):
    eps_ub = config.eps_ub if flags.clip_higher else config.eps_lb
    C = config.C if flags.dual_clip else None
    return config.eps_lb, eps_ub, C


def _part(logits: np.ndarray, tb: TokenBatch, scale: float, config: TrainConfig,
          flags: VariantFlags, ref_logits: np.ndarray | None, mask: np.ndarray | None = None):
    """Gradient and value of ``scale * mean_seq sum_t M_t [surrogate_t - beta*kl_t]``."""
    if len(tb) == 0:
        return np.zeros_like(logits), 0.0, 0
    eps_lb, eps_ub, C = _clip_bounds(config, flags)
    cur = current_logp(logits, tb.states, tb.actions)
    r, overflow = importance_ratio(cur, tb.behavior_logp)
    w = np.full(len(tb), scale / tb.n_seq)
    if not flags.token_sum:
        w = w / tb.seq_len
    if mask is not None:
        w = w * mask
    value = clipped_surrogate(r, tb.advantage, eps_lb, eps_ub, C)
    dvalue = surrogate_logp_grad(r, tb.advantage, eps_lb, eps_ub, C)
    if config.beta > 0 and ref_logits is not None:
        ref = current_logp(ref_logits, tb.states, tb.actions)
        value = value - config.beta * kl_estimator(ref, cur)
        dvalue = dvalue + config.beta * np.expm1(ref - cur)
    grad = score_gradient(logits, tb.states, tb.actions, w * dvalue)
    return grad, float(np.sum(w * value)), overflow


def joint_update(params: PolicyParams, on_items: Sequence, on_adv: Sequence[float],
                 sil_items: Sequence, sil_adv: Sequence[float], config: TrainConfig,
                 flags: VariantFlags, gamma_t: float = 0.0, mask_rng_key: tuple = (0,),
                 reference: PolicyParams | None = None) -> tuple[PolicyParams, UpdateStats]:
    """Gradient ascent on ``J_on + gamma_t * J_sil``, mini-batched.

    Both pools are split into the same number of chunks ``k`` (chosen so no
    chunk exceeds ``mini_batch_size`` trajectories); chunk ``i`` of each pool
    goes into step ``i``.  The covariance mask of the self-imitation part is
    drawn per chunk from substream ``mask_rng_key + (i,)`` of the run seed.
    """
    stats = UpdateStats()
    on = [(x, a) for x, a in zip(on_items, on_adv) if np.any(x.learnable())]
    sil = [(x, a) for x, a in zip(sil_items, sil_adv) if np.any(x.learnable())]
    n_total = max(len(on), len(sil))
    if n_total == 0:
        stats.noop_updates = 1
        log.info("empty effective batch; update skipped")
        return params, stats
    mbs = config.mini_batch_size or n_total
    k = max(1, math.ceil(n_total / mbs))
    ref_logits = reference.logits if reference is not None else None
    logits = params.logits
    version = params.version
    for i, (on_idx, sil_idx) in enumerate(zip(np.array_split(np.arange(len(on)), k),
                                              np.array_split(np.arange(len(sil)), k))):
        tb_on = token_batch([on[j][0] for j in on_idx], [on[j][1] for j in on_idx])
        tb_sil = token_batch([sil[j][0] for j in sil_idx], [sil[j][1] for j in sil_idx])
        grad, value, overflow = _part(logits, tb_on, 1.0, config, flags, ref_logits)
        stats.onpolicy_tokens += len(tb_on)
        if len(tb_sil):
            cov = token_covariance(current_logp(logits, tb_sil.states, tb_sil.actions),
                                   tb_sil.advantage)
            mask = select_clip_mask(cov, config.omega_lb, config.omega_ub, config.lam,
                                    substream(config.seed, CLIP_STREAM, *mask_rng_key, i))
            g_sil, v_sil, o_sil = _part(logits, tb_sil, gamma_t, config, flags, ref_logits, mask)
            grad = grad + g_sil
            value += v_sil
            overflow += o_sil
            stats.sil_samples += tb_sil.n_seq
            stats.sil_tokens += len(tb_sil)
            stats.clipped_tokens += int(np.count_nonzero(mask == 0.0))
            stats.masks.append(mask)
        stats.objective += value
        stats.ratio_overflow += overflow
        if len(tb_on) == 0 and len(tb_sil) == 0:
            stats.noop_updates += 1
            continue
        logits = logits + config.learning_rate * grad
        version += 1
    if not np.all(np.isfinite(logits)):
        raise ContractViolation("update produced non-finite logits")
    return PolicyParams(logits, version), stats


def _group_items(groups: Sequence):
    items, adv = [], []
    for g in groups:
        for traj, a in zip(g.trajectories, g.advantages):
            items.append(traj)
            adv.append(a)
    return items, adv


def on_policy_update(groups: Sequence[GroupBatch], params: PolicyParams, config: TrainConfig,
                     flags: VariantFlags | None = None, reference: PolicyParams | None = None):
    """Clipped-surrogate ascent over the unmasked tokens of ``groups``."""
    flags = flags or variant_flags(config)
    items, adv = _group_items(groups)
    return joint_update(params, items, adv, [], [], config, flags, reference=reference)


def sil_update(retained: Sequence, params: PolicyParams, config: TrainConfig, gamma_t: float,
               flags: VariantFlags | None = None, mask_rng_key: tuple = (0,),
               reference: PolicyParams | None = None):
    """Self-imitation ascent over ``(stored_trajectory, recalibrated_adv)`` pairs."""
    if not 0.0 <= gamma_t <= 1.0:
        raise ContractViolation(f"gamma_t must lie in [0, 1], got {gamma_t}")
    flags = flags or variant_flags(config)
    if not retained:
        log.info("no retained replay entries; self-imitation step skipped")
        stats = UpdateStats(noop_updates=1)
        return params, stats
    items = [e for e, _ in retained]
    adv = [a for _, a in retained]
    return joint_update(params, [], [], items, adv, config, flags, gamma_t, mask_rng_key,
                        reference=reference)


RolloutFn = Callable[[ToolEnv, object, Sequence[int], int, int, int], list]


class Trainer:
    """Holds the live policy, both buffers and the step counter."""

    def __init__(self, config: TrainConfig, rollout_fn: RolloutFn | None = None,
                 params: PolicyParams | None = None):
        self.config = config
        self.flags = variant_flags(config)
        self.env = make_env(config.env_name, config.env_max_turns)
        self.params = params or PolicyParams.zeros(self.env.state_count, self.env.action_count)
        if self.params.shape != (self.env.state_count, self.env.action_count):
            raise ContractViolation(
                f"policy shape {self.params.shape} does not match {self.env.name} "
                f"({self.env.state_count}, {self.env.action_count})")
        self.reference = self.params.snapshot()
        self.replay = ReplayBuffer(config.N_D)
        self.baseline = BaselineBuffer(config.N_D_R)
        self.rollout_fn = rollout_fn or rollout_groups
        self.step_index = 0
        self.max_response_turns = config.resolved_max_response_turns

    def task_seeds(self, step: int) -> list[int]:
        c = self.config
        rng = substream(c.seed, TASK_STREAM, step)
        span = c.env_seed_hi - c.env_seed_lo + 1
        if span >= c.train_batch_size:
            picks = rng.choice(span, size=c.train_batch_size, replace=False)
        else:
            picks = rng.integers(0, span, size=c.train_batch_size)
        return [int(c.env_seed_lo + p) for p in picks]

    def _score_and_group(self, raw_groups, mu_t: float) -> list[GroupBatch]:
        all_trajs = [t for g in raw_groups for t in g]
        for t in all_trajs:
            t.reward = score(t, mu_t)
        if self.flags.filters:
            masks = filter_void_and_overlong(all_trajs, self.max_response_turns)
        else:
            masks = [np.ones(len(t), dtype=bool) for t in all_trajs]
        for t, m in zip(all_trajs, masks):
            t.loss_mask = m
        groups = []
        for g in raw_groups:
            r = np.array([t.reward.total for t in g])
            std = float(r.std())
            if self.flags.std_norm and std == 0.0:
                adv = np.zeros_like(r)
            else:
                adv = group_advantage(r, self.flags.std_norm)
            for t, a in zip(g, adv):
                t.advantage = float(a)
            groups.append(GroupBatch(g[0].task_seed, list(g), r, adv, std))
        return groups

    def train_step(self) -> StepResult:
        t0 = time.perf_counter()
        c, flags = self.config, self.flags
        step = self.step_index
        snapshot = self.params.snapshot()
        raw_groups = self.rollout_fn(self.env, snapshot, self.task_seeds(step), c.G, c.seed, step)
        mu_t = rewards.mu(step, c.T_decay) if flags.curricula else 0.0
        gamma_t = rewards.gamma(step, c.T_warmup) if flags.sil else 0.0
        groups = self._score_and_group(raw_groups, mu_t)
        all_trajs = [t for g in groups for t in g.trajectories]

        for g in groups:
            self.baseline.push(g.mean_reward)

        kept = filter_low_variance_groups(groups, c.rollout_filter_ratio) if flags.filters else list(groups)
        if flags.std_norm:
            # zero-std groups carry no signal and cannot be normalised
            kept = [g for g in kept if g.reward_std > 0.0]
        items, adv = _group_items(kept)

        retained = []
        if flags.sil and not self.replay.is_full():
            branch = "fill"
            candidates = [(t, a) for t, a in zip(items, adv) if np.any(t.learnable())]
            self.replay.admit_batch(candidates, step)
            self.params, stats = joint_update(self.params, items, adv, [], [], c, flags,
                                              reference=self.reference)
        elif flags.sil:
            branch = "sil"
            retained = self.replay.refilter(self.baseline, c.baseline_percentile)
            self.params, stats = joint_update(
                self.params, items, adv, [e for e, _ in retained], [a for _, a in retained],
                c, flags, gamma_t, mask_rng_key=(step,), reference=self.reference)
            self.replay.drain()
        else:
            branch = "on_policy"
            self.params, stats = joint_update(self.params, items, adv, [], [], c, flags,
                                              reference=self.reference)

        record = MetricsRecord(
            step=step + 1,
            branch=branch,
            success_rate=float(np.mean([t.success for t in all_trajs])),
            mean_total_reward=float(np.mean([t.reward.total for t in all_trajs])),
            entropy=batch_entropy(all_trajs),
            mean_n_tool_call=float(np.mean([t.n_tool_call for t in all_trajs])),
            replay_fill=self.replay.fill if flags.sil else 0.0,
            clipped_token_fraction=stats.clipped_token_fraction,
            gamma_t=gamma_t,
            mu_t=mu_t,
            kl_metric=kl_metric(self.params, self.reference, all_trajs),
            ratio_overflow=stats.ratio_overflow,
            noop_updates=stats.noop_updates,
            groups_kept=len(kept),
            masked_trajectories=sum(not np.any(t.learnable()) for t in all_trajs),
            onpolicy_tokens=stats.onpolicy_tokens,
            sil_samples=stats.sil_samples,
            sil_tokens=stats.sil_tokens,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        self.step_index += 1
        return StepResult(record, groups, kept, retained, stats, snapshot)

    def train(self, num_steps: int | None = None, callback=None) -> list[MetricsRecord]:
        records = []
        for _ in range(self.config.num_steps if num_steps is None else num_steps):
            res = self.train_step()
            records.append(res.record)
            if callback is not None:
                callback(res.record)
        return records
