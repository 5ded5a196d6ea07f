import math

import numpy as np
import pytest

import oracles
from spearlab.advantage import GroupBatch
from spearlab.errors import ContractViolation
from spearlab.objectives import (LOG_RATIO_CAP, clipped_surrogate, filter_low_variance_groups,
                                 filter_void_and_overlong, importance_ratio, kl_estimator, kl_metric,
                                 round_half_up, select_clip_mask, surrogate_logp_grad,
                                 token_covariance)
from spearlab.policy import PolicyParams, substream

EPS = (0.2, 0.28)

# (r, A, C, expected), worked out by hand with eps_lb=0.2, eps_ub=0.28
SURROGATE_TABLE = [
    (1.5, 1.0, 10.0, 1.28),      # above the upper clip
    (1.0, 1.0, 10.0, 1.0),       # on-policy
    (0.5, 1.0, 10.0, 0.5),       # below the lower clip, positive A: unclipped branch is smaller
    (1.28, 1.0, 10.0, 1.28),     # at the upper bound
    (1.2, 2.0, 10.0, 2.4),       # inside the band
    (0.5, -1.0, 10.0, -0.8),     # below the lower clip, negative A
    (1.5, -1.0, 10.0, -1.5),     # above the band, negative A, above the floor
    (20.0, -1.0, 10.0, -10.0),   # dual-clip floor
    (20.0, -1.0, None, -20.0),   # floor disabled
    (0.9, -2.0, 10.0, -1.8),     # inside the band, negative A
    (12.0, -0.5, 10.0, -5.0),    # floor with fractional A
    (3.0, 0.0, 10.0, 0.0),       # zero advantage
]


@pytest.mark.parametrize("r,A,C,expected", SURROGATE_TABLE)
def test_surrogate_table(r, A, C, expected):
    assert clipped_surrogate(r, A, *EPS, C) == expected
    assert oracles.surrogate_oracle(r, A, *EPS, C) == pytest.approx(expected, abs=1e-15)


def test_surrogate_vectorised_matches_scalar():
    rng = np.random.default_rng(0)
    r = rng.uniform(0.01, 30, 500)
    A = rng.normal(size=500)
    got = clipped_surrogate(r, A, *EPS, 10.0)
    want = [oracles.surrogate_oracle(x, a, *EPS, 10.0) for x, a in zip(r, A)]
    assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_surrogate_logp_grad_matches_fd():
    rng = np.random.default_rng(1)
    checked = 0
    for _ in range(400):
        lp = rng.uniform(-3, 3)
        A = rng.normal()
        r = math.exp(lp)
        if min(abs(r - k) for k in (0.8, 1.28, 10.0)) < 1e-3:
            continue
        g = float(surrogate_logp_grad(r, A, *EPS, 10.0))
        h = 1e-6
        fd = (clipped_surrogate(math.exp(lp + h), A, *EPS, 10.0)
              - clipped_surrogate(math.exp(lp - h), A, *EPS, 10.0)) / (2 * h)
        assert g == pytest.approx(fd, rel=1e-6, abs=1e-9)
        checked += 1
    assert checked > 300


def test_importance_ratio_examples():
    assert importance_ratio(-1.0, -1.0)[0] == 1.0
    assert importance_ratio(-1.0 + math.log(1.5), -1.0)[0] == pytest.approx(1.5, abs=1e-15)
    assert importance_ratio(-1.0 - math.log(2), -1.0)[0] == pytest.approx(0.5, abs=1e-15)


def test_importance_ratio_overflow_is_capped_and_counted():
    r, n = importance_ratio(np.array([0.0, 0.0]), np.array([-1000.0, -1.0]))
    assert n == 1 and np.isfinite(r).all() and r[0] == math.exp(LOG_RATIO_CAP)


def test_importance_ratio_rejects_nan():
    with pytest.raises(ContractViolation):
        importance_ratio(np.nan, 0.0)


def test_covariance_examples():
    assert np.allclose(token_covariance([-1.0, -3.0], [1.0, 0.2]), [0.4, 0.4], atol=1e-15)
    assert np.all(token_covariance([-1.0, -2.0, -4.0], [0.3] * 3) == 0.0)
    assert np.all(token_covariance([-0.7] * 5, [1, 2, 3, 4, 5]) == 0.0)


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.49, 90.5)] == [1, 2, 3, 2, 91]


@pytest.mark.parametrize("n_eligible,expected", [(30, 2), (1, 1), (0, 0)])
def test_clip_mask_examples(n_eligible, expected):
    cov = np.zeros(100)
    cov[:n_eligible] = 5.0
    mask = select_clip_mask(cov, 1.0, 40.0, 0.02, substream(0, 2))
    assert np.count_nonzero(mask == 0) == expected
    assert np.all(cov[mask == 0] == 5.0)


def test_clip_mask_zero_budget():
    mask = select_clip_mask(np.full(50, 3.0), 1.0, 40.0, 0.0, substream(0, 2))
    assert np.all(mask == 1.0)


def test_clip_mask_reproducible():
    cov = np.random.default_rng(0).uniform(0, 50, 400)
    a = select_clip_mask(cov, 1.0, 40.0, 0.05, substream(7, 2, 3))
    b = select_clip_mask(cov, 1.0, 40.0, 0.05, substream(7, 2, 3))
    assert np.array_equal(a, b)


def _traj_with(tv, n=None):
    t = oracles.scripted_trajectory("calc_chain", 0, [0] * len(tv))
    t.tool_call_valid = np.array(tv, dtype=bool)
    return t


def test_void_and_overlong_filter():
    ok = _traj_with([True, True, True])
    void = _traj_with([True, False, True])
    masks = filter_void_and_overlong([ok, void], 3)
    assert masks[0].all() and not masks[1].any()
    assert not filter_void_and_overlong([ok], 2)[0].any()      # over budget
    assert filter_void_and_overlong([ok], 3)[0].all()          # exactly at budget


def _group(seed, std):
    return GroupBatch(seed, [], np.zeros(2), np.zeros(2), std)


def test_low_variance_filter_examples():
    groups = [_group(i, s) for i, s in enumerate([0.0, 0.5, 1.0, 0.2])]
    assert [g.task_seed for g in filter_low_variance_groups(groups, 0.75)] == [1, 2, 3]
    equal = [_group(s, 0.3) for s in (9, 4, 7, 1)]
    assert [g.task_seed for g in filter_low_variance_groups(equal, 0.75)] == [4, 7, 1]
    assert len(filter_low_variance_groups(groups, 1.0)) == 4


def test_kl_estimator():
    assert kl_estimator(-1.2, -1.2) == 0.0
    d = np.random.default_rng(0).normal(size=1000)
    assert np.all(kl_estimator(d, np.zeros(1000)) >= 0)


def test_kl_metric_recomputation():
    rng = np.random.default_rng(3)
    ref = PolicyParams(rng.normal(size=(6, 4)))
    cur = PolicyParams(ref.logits + rng.normal(scale=0.3, size=(6, 4)))
    items = oracles.random_token_items(rng, 5, 6, 4, cur.logits)
    want = []
    for t in items:
        for s, a in zip(t.states, t.actions):
            d = oracles.log_softmax(list(ref.logits[s]))[a] - oracles.log_softmax(list(cur.logits[s]))[a]
            want.append(math.exp(d) - d - 1)
    assert abs(kl_metric(cur, ref, items) - np.mean(want)) < 1e-12
    assert kl_metric(ref, ref, items) == 0.0
