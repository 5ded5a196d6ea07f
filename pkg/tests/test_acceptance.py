"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed at the end of the session.  The end-to-end learning criterion (9)
trains 20 full runs and takes several minutes.
"""
from __future__ import annotations

import json
import math
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

import conftest
import oracles
import scenarios
from spearlab import rewards
from spearlab.advantage import BaselineBuffer, p50
from spearlab.config import TrainConfig
from spearlab.harness import run_train
from spearlab.objectives import clipped_surrogate, round_half_up, token_covariance
from spearlab.policy import PolicyParams, grad_log_prob
from spearlab.replay import ReplayBuffer, StoredTrajectory
from spearlab.trainer import joint_update, variant_flags


@contextmanager
def criterion(number: int, title: str, budget_s: float):
    """Time the block, check the runtime budget, record a PASS/FAIL line."""
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
        elapsed = time.perf_counter() - t0
        assert elapsed < budget_s, f"runtime {elapsed:.1f}s exceeds {budget_s}s"
    except BaseException as exc:
        elapsed = time.perf_counter() - t0
        line = f"criterion {number} FAIL  {title} ({elapsed:.2f}s) {detail.get('info', '')} :: {exc}"
        conftest.ACCEPTANCE_LINES.append(line.strip())
        print(line)
        raise
    line = f"criterion {number} PASS  {title} ({elapsed:.2f}s) {detail.get('info', '')}"
    conftest.ACCEPTANCE_LINES.append(line.strip())
    print(line)


def test_c01_schedule_exactness():
    with criterion(1, "gamma/mu schedules match closed forms", 1.0):
        for T in (1, 4, 100, 200, 777):
            for t in (0, T / 4, T / 2, 3 * T / 4, T, 2 * T):
                g, m = rewards.gamma(t, T), rewards.mu(t, T)
                assert abs(g - oracles.schedule_gamma(t, T)) <= 1e-12
                assert abs(m - oracles.schedule_mu(t, T)) <= 1e-12
                if t <= T:
                    assert abs(g - (1 - m)) <= 1e-12


def test_c02_gradient_oracle():
    with criterion(2, "analytic gradients match central differences", 30.0) as d:
        rng = np.random.default_rng(0)
        policy_err = []
        for _ in range(100):
            logits = rng.normal(scale=2.0, size=(1, 6))
            a = int(rng.integers(6))
            _, g = grad_log_prob(PolicyParams(logits), 0, a)
            fd = oracles.central_difference(lambda x: oracles.log_softmax(list(x[0]))[a], logits)
            policy_err.append(oracles.relative_error(g, fd[0]))
        on_err, sil_err, skipped = scenarios.objective_gradient_errors(100)
        d["info"] = (f"[policy max {max(policy_err):.1e}, on-policy max {max(on_err):.1e} "
                     f"over {len(on_err)}, SIL max {max(sil_err):.1e} over {len(sil_err)}]")
        assert max(policy_err) < 1e-5
        assert len(on_err) >= 100 and max(on_err) < 1e-5
        assert len(sil_err) >= 100 and max(sil_err) < 1e-5


def test_c03_surrogate_oracle():
    from test_objectives import EPS, SURROGATE_TABLE
    with criterion(3, "clipped surrogate matches the 12-case table", 1.0):
        assert len(SURROGATE_TABLE) == 12
        for r, A, C, expected in SURROGATE_TABLE:
            assert clipped_surrogate(r, A, *EPS, C) == expected, (r, A, C)
        assert clipped_surrogate(20.0, -1.0, 0.2, 0.28, 10.0) == -10.0


def test_c04_percentile_robustness():
    with criterion(4, "P50 equals brute force; bounded outlier influence", 10.0):
        rng = np.random.default_rng(4)
        sizes = np.concatenate([[1, 2, 3, 10_000], rng.integers(1, 10_001, size=996)])
        for n in sizes:
            values = rng.uniform(-1.1, 1.1, size=int(n))
            s = np.sort(values)
            k = (len(s) + 1) // 2 - 1
            assert p50(values) == s[k]
            # contaminate with one outlier; n below counts the contaminated buffer
            dirty = np.append(values, 1e9)
            n_dirty = len(dirty)
            shift = abs(p50(dirty) - s[k])
            gap = s[k + 1] - s[k] if k + 1 < len(s) else 0.0
            assert shift <= gap
            assert np.mean(dirty) - np.mean(values) >= 1e9 / (2 * n_dirty)


def _entry(reward, adv):
    return StoredTrajectory(np.array([0]), np.array([0]), np.array([-0.1]), reward, adv, 0,
                            np.array([True]))


def test_c05_buffer_gate_soundness():
    with criterion(5, "replay admission/refilter/drain properties", 10.0):
        rng = np.random.default_rng(5)
        for _ in range(400):
            cap = int(rng.integers(1, 9))
            buf = ReplayBuffer(cap)
            baseline = BaselineBuffer(int(rng.integers(1, 20)))
            baseline.push(float(rng.normal()))
            admitted = 0
            for _ in range(60):
                op = rng.integers(4)
                if op == 0 and not buf.is_full():
                    adv = float(rng.normal())
                    admitted += buf.maybe_store(_entry(float(rng.normal()), adv), adv)
                elif op == 1:
                    baseline.push(float(rng.normal()))
                elif op == 2:
                    floor = oracles.lower_median_by_sort(list(baseline.values()))
                    want = [(e.reward_total, e.reward_total - floor) for e in buf.entries
                            if e.reward_total - floor > 0]
                    assert [(e.reward_total, a) for e, a in buf.refilter(baseline)] == want
                elif op == 3:
                    buf.drain()
                    admitted = 0
                    assert len(buf) == 0
                assert all(e.adv_at_store > 0 for e in buf.entries)
                assert len(buf) <= cap
                assert admitted <= cap


def test_c06_clip_mask_budget():
    with criterion(6, "covariance clip budget, band and zero gradient", 5.0):
        for seed in range(60):
            rng = np.random.default_rng(seed)
            S, A = 8, 5
            logits = rng.normal(size=(S, A))
            items = oracles.random_token_items(rng, int(rng.integers(3, 12)), S, A, logits)
            adv = list(rng.uniform(0.05, 3.0, size=len(items)))
            lam = float(rng.choice([0.0, 0.02, 0.1, 0.3]))
            config = TrainConfig(lam=lam, omega_lb=0.0, omega_ub=float(rng.uniform(0.05, 2)),
                                 seed=seed, learning_rate=1.0)
            flags = variant_flags(config)
            runs = [joint_update(PolicyParams(logits), [], [], items, adv, config, flags, 1.0,
                                 mask_rng_key=(seed,))[1].masks[0] for _ in range(2)]
            mask = runs[0]
            assert np.array_equal(runs[0], runs[1])
            # independent covariance recomputation
            lp, ad = [], []
            for t, a in zip(items, adv):
                for s, act in zip(t.states, t.actions):
                    lp.append(oracles.log_softmax(list(logits[s]))[act])
                    ad.append(a)
            lp, ad = np.array(lp), np.array(ad)
            cov = (lp - lp.mean()) * (ad - ad.mean())
            eligible = (cov >= config.omega_lb) & (cov <= config.omega_ub)
            assert np.count_nonzero(mask == 0) == min(round_half_up(lam * len(cov)), eligible.sum())
            assert np.all(eligible[mask == 0])
        for seed in range(10):
            mask, delta = scenarios.masked_tokens_get_zero_gradient(seed)
            assert np.count_nonzero(mask == 0) > 0
            for k in np.flatnonzero(mask == 0):
                assert np.all(delta[k] == 0.0)


def test_c07_filter_exclusion():
    with criterion(7, "excluded trajectories leave parameters bit-identical", 10.0):
        for variant in ("drbot", "spear"):
            clean, _ = scenarios.perturbation_run(variant)
            assert np.any(clean != 0.0)
            for kind in scenarios.EXCLUDED:
                scrambled, _ = scenarios.perturbation_run(variant, [kind])
                assert np.array_equal(clean, scrambled), (variant, kind)
            control, _ = scenarios.perturbation_run(variant, ["kept"])
            assert not np.array_equal(clean, control)


def test_c08_algorithm_conformance():
    with criterion(8, "scripted 6-step branch trace", 5.0):
        records = scenarios.branch_trace(steps=6, batch=2)
        assert [r.branch for r in records] == ["fill", "fill", "sil", "fill", "fill", "sil"]
        assert all(r.replay_fill == 0.0 for r in records if r.branch == "sil")


def _final_success(variant, env_name, seed):
    t0 = time.perf_counter()
    res = run_train(TrainConfig(variant=variant, env_name=env_name, seed=seed, num_steps=500,
                                G=8, train_batch_size=16))
    return res.final_success, time.perf_counter() - t0


def test_c09_end_to_end_learning():
    with criterion(9, "end-to-end directional learning", 20 * 600.0) as d:
        results = {}
        for env_name, variants in (("calc_chain", ("spear", "grpo")), ("key_door", ("spear", "drbot"))):
            for v in variants:
                results[(env_name, v)] = [_final_success(v, env_name, s) for s in range(5)]
        for (env_name, v), runs in results.items():
            print(f"  {env_name:10s} {v:5s} final greedy success {[round(s, 2) for s, _ in runs]} "
                  f"median {np.median([s for s, _ in runs]):.2f} "
                  f"max run {max(t for _, t in runs):.1f}s")
        med = {k: float(np.median([s for s, _ in r])) for k, r in results.items()}
        spear_calc = [s for s, _ in results[("calc_chain", "spear")]]
        d["info"] = (f"[calc spear {spear_calc}, median spear {med[('calc_chain', 'spear')]:.2f} "
                     f"vs grpo {med[('calc_chain', 'grpo')]:.2f}; key_door spear "
                     f"{med[('key_door', 'spear')]:.2f} vs drbot {med[('key_door', 'drbot')]:.2f}]")
        assert all(t < 600 for r in results.values() for _, t in r)
        assert sum(s >= 0.9 for s in spear_calc) >= 4, "spear reaches 0.9 on fewer than 4/5 seeds"
        assert med[("calc_chain", "spear")] >= med[("calc_chain", "grpo")], "spear median below grpo"
        assert med[("key_door", "spear")] >= med[("key_door", "drbot")], "spear median below drbot"


def test_c10_determinism(tmp_path):
    with criterion(10, "identical train commands give identical metrics bytes", 120.0):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            proc = subprocess.run([sys.executable, "-m", "spearlab", "train", "--seed", "7",
                                   "--out", str(out)], capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            outs.append((out / "metrics.jsonl").read_bytes())
        assert len(outs[0].splitlines()) == TrainConfig().num_steps
        assert outs[0] == outs[1]


def test_c11_reward_term_dominance():
    with criterion(11, "outcome sign dominates the shaped terms", 1.0):
        checked = 0
        for success in (True, False):
            outcome = rewards.outcome_reward(success)
            for n in range(101):
                tool = rewards.tool_call_reward(n)
                for fmt_ok in (True, False):
                    fmt = rewards.format_reward([fmt_ok])
                    for i in range(101):
                        mu = i / 100
                        total = rewards.compose(outcome, tool, fmt, mu).total
                        if mu * tool + fmt < 1:
                            assert math.copysign(1, total) == math.copysign(1, outcome)
                            checked += 1
        assert checked > 30_000


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
