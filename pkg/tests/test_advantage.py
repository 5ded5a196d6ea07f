import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from spearlab.advantage import (BaselineBuffer, group_advantage, p50, percentile_nearest_rank,
                                push_baseline, recalibrate)
from spearlab.errors import ContractViolation, DegenerateGroupError

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_group_advantage_examples():
    assert np.allclose(group_advantage([1, -1, -1, -1]), [1.5, -0.5, -0.5, -0.5])
    assert np.allclose(group_advantage([1, -1], normalize_by_std=True), [1, -1])
    assert np.allclose(group_advantage([0.3, 0.3, 0.3]), 0.0)


def test_std_normalisation_of_constant_group_raises():
    with pytest.raises(DegenerateGroupError):
        group_advantage([0.5, 0.5], normalize_by_std=True)


def test_group_needs_two():
    with pytest.raises(ContractViolation):
        group_advantage([1.0])


@given(st.lists(finite, min_size=2, max_size=16))
def test_advantages_sum_to_zero(rewards):
    adv = group_advantage(rewards)
    assert abs(adv.sum()) <= 1e-9 * max(1.0, max(abs(r) for r in rewards)) * len(rewards)


def test_p50_examples():
    assert p50([3.0]) == 3.0
    assert p50([1.0, 2.0]) == 1.0          # lower median
    assert p50([5.0, 1.0, 3.0]) == 3.0
    assert percentile_nearest_rank([1, 2, 3, 4], 100) == 4
    assert percentile_nearest_rank([1, 2, 3, 4], 25) == 1


def test_p50_empty_raises():
    with pytest.raises(ContractViolation):
        p50([])


@settings(max_examples=200)
@given(st.lists(finite, min_size=1, max_size=300))
def test_p50_matches_sort(values):
    assert p50(values) == oracles.lower_median_by_sort(values)


def test_baseline_fifo_eviction():
    buf = BaselineBuffer(3)
    for v in [1, 2, 3, 4, 5]:
        push_baseline(buf, v)
    assert list(buf.values()) == [3, 4, 5]


@given(st.integers(1, 20), st.lists(finite, max_size=60))
def test_baseline_never_exceeds_capacity(cap, values):
    buf = BaselineBuffer(cap)
    for i, v in enumerate(values):
        buf.push(v)
        assert len(buf) == min(i + 1, cap)
    if values:
        assert list(buf.values()) == values[-cap:]


def test_recalibrate():
    buf = BaselineBuffer(10)
    buf.extend([-1.0, 0.0, 2.0])
    assert recalibrate(1.5, buf) == 1.5
    assert recalibrate(-0.5, [-1.0, -0.8, 0.5, 0.9]) == pytest.approx(0.3)
