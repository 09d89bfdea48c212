import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hubplatoon.errors import DomainError, ValidationError
from hubplatoon.horizon import (CentralizedWindow, DistributedMessage, DistributedPlanner,
                                beyond_horizon_policy, beyond_horizon_value, centralized_decide,
                                centralized_tail, distributed_decide, distributed_window)
from hubplatoon.model import ArrivalPmf, RewardParams
from hubplatoon.oracles import enumerate_single_hub, exhaustive_sequences
from hubplatoon.verify import check_centralized

P = RewardParams(10.0, 3.33)


def zero_pmf(T):
    return ArrivalPmf.point_mass(T)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_distributed_no_arrivals_releases(n):
    assert distributed_decide(n, 0, DistributedMessage((0, 0)), zero_pmf(10), 0.5, P, L=2, cap=8) == n


def test_distributed_window_closed_form():
    # L=2, no arrivals: holding n only costs c*n per step, releasing pays b(n-1)
    V, rel = distributed_window(0, DistributedMessage((0, 0)), zero_pmf(5), 0.0, P, 2, 6)
    np.testing.assert_allclose(V, [max(0.0, 10.0 * (n - 1)) for n in range(7)])
    assert rel.all()


def test_full_exit_ignores_message():
    own = ArrivalPmf(np.tile([0.7, 0.3], (11, 1)))
    for n in range(6):
        a = distributed_decide(n, 2, DistributedMessage((3, 0, 5, 1)), own, 1.0, P, L=4, cap=8)
        b = distributed_decide(n, 2, DistributedMessage((0, 0, 0, 0)), own, 1.0, P, L=4, cap=8)
        assert a == b


def test_hold_for_announced_platoon():
    msg = DistributedMessage((0, 5, 0))
    assert distributed_decide(1, 0, msg, zero_pmf(10), 0.0, P, L=3, cap=10) == 0
    assert distributed_decide(1, 0, DistributedMessage((0, 0, 0)), zero_pmf(10), 0.0, P,
                              L=3, cap=10) == 1
    # exhaustive search over the known window agrees
    best, first = exhaustive_sequences(1, [0, 5, 0], P, 10)
    assert first == {0}


def window_pmf(n, xrows, msg, l, cap):
    rows = [np.eye(1, cap + 1, n)[0]]
    for x, m in zip(xrows, msg):
        th = stats.binom.pmf(np.arange(m + 1), m, 1 - l)
        rows.append(np.convolve(x, th))
    width = max(r.size for r in rows)
    return ArrivalPmf(np.array([np.pad(r, (0, width - r.size)) for r in rows]))


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_distributed_matches_policy_enumeration(seed):
    rng = np.random.default_rng(seed)
    L, cap = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    T = L + 2
    own = ArrivalPmf(rng.dirichlet(np.ones(2), size=T + 1))
    msg = tuple(int(v) for v in rng.integers(0, 3, size=L))
    l = float(rng.choice([0.0, 0.5, 1.0]))
    r = RewardParams(float(rng.uniform(0.5, 10)), float(rng.uniform(0.1, 5)))
    t = int(rng.integers(0, T - L + 1))
    V, rel = distributed_window(t, DistributedMessage(msg), own, l, r, L, cap)
    for n in range(cap + 1):
        pmf = window_pmf(n, own.probs[t + 1:t + 1 + L], msg, l, cap)
        assert V[n] == pytest.approx(enumerate_single_hub(pmf, r, L, cap), abs=1e-12)


def test_distributed_window_clips_at_episode_end():
    own = ArrivalPmf(np.tile([0.5, 0.5], (6, 1)))
    planner = DistributedPlanner(own, 0.0, P, L=30, cap=6)
    V_end, rel_end = planner.window(5, ())
    assert rel_end.all()
    np.testing.assert_allclose(V_end, [max(0.0, 10.0 * (n - 1)) for n in range(7)])
    short = DistributedPlanner(own, 0.0, P, L=2, cap=6)
    np.testing.assert_allclose(planner.window(3, (1, 2))[0], short.window(3, (1, 2, 9))[0])


def test_message_validation():
    with pytest.raises(ValidationError):
        DistributedMessage((1, -1))
    with pytest.raises(ValidationError):
        CentralizedWindow((1, 2), (0,))
    with pytest.raises(ValidationError):
        CentralizedWindow((-1,), (0,))


def test_window_length_must_be_positive():
    with pytest.raises(DomainError):
        distributed_decide(1, 0, DistributedMessage(()), zero_pmf(3), 0.5, P, L=0)
    with pytest.raises(DomainError):
        centralized_decide(1, 0, CentralizedWindow((), ()), P, L=0)
    with pytest.raises(DomainError):
        DistributedPlanner(zero_pmf(3), 0.5, P, L=0)
    with pytest.raises(DomainError):
        centralized_decide(99, 0, CentralizedWindow((0,), (0,)), P, L=1, cap=10)


@pytest.mark.parametrize("n", [1, 3, 7])
def test_centralized_empty_window_releases(n):
    assert centralized_decide(n, 0, CentralizedWindow((0, 0, 0), (0, 0, 0)), P, L=3, cap=10) == n


def test_centralized_merge_example():
    win = CentralizedWindow((0, 0), (3, 0))
    assert centralized_decide(1, 0, win, P, L=2, cap=10) == 0
    V, rel = centralized_tail(win.join_arrivals, win.upstream_arrivals, P, 10)
    assert V[0, 1] == pytest.approx(30.0 - 3.33)
    assert rel[1, 4]


def test_centralized_uses_first_L_steps():
    win = CentralizedWindow((0, 0, 0), (0, 0, 9))
    assert centralized_decide(1, 0, win, P, L=2, cap=12) == 1
    assert centralized_decide(1, 0, win, P, L=3, cap=12) == 0
    assert centralized_decide(4, 9, CentralizedWindow((), ()), P, L=5, cap=12) == 4


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_centralized_matches_exhaustive_search(seed):
    ok, msg = check_centralized(np.random.default_rng(seed))
    assert ok, msg


def test_decisions_are_stateless():
    own = ArrivalPmf(np.tile([0.5, 0.5], (11, 1)))
    msg = DistributedMessage((0, 2, 0, 1))
    first = [distributed_decide(n, 1, msg, own, 0.3, P, L=4, cap=6) for n in range(7)]
    distributed_decide(3, 5, DistributedMessage((9, 9, 9, 9)), own, 0.3, P, L=4, cap=6)
    assert first == [distributed_decide(n, 1, msg, own, 0.3, P, L=4, cap=6) for n in range(7)]


def test_beyond_horizon():
    assert beyond_horizon_value(0, P) == 0.0
    assert beyond_horizon_value(1, P) == 0.0
    assert beyond_horizon_value(3, P) == 20.0
    assert beyond_horizon_policy(3) == 3
