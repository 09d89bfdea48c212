import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hubplatoon.errors import DomainError, ValidationError
from hubplatoon.model import (ArrivalPmf, CorridorConfig, HubParams, HubState, RewardParams,
                              benefit_from_fuel, binomial_table, episode_reward, reward,
                              reward_table, step_hub_state)
from hubplatoon.sim import EpisodeTrace

P = RewardParams(10.0, 3.33)


def test_reward_examples():
    assert reward(5, 3, P) == pytest.approx(13.34, abs=1e-12)
    assert reward(2, 0, P) == pytest.approx(-6.66, abs=1e-12)
    assert reward(1, 1, RewardParams(7.0, 1.0)) == 0.0


@pytest.mark.parametrize("u", [-1, 6])
def test_reward_rejects_bad_release(u):
    with pytest.raises(DomainError):
        reward(5, u, P)


@given(b=st.floats(0, 100), c=st.floats(0, 10), n=st.integers(0, 40))
def test_reward_boundary_forms(b, c, n):
    p = RewardParams(b, c)
    assert reward(n, n, p) == max(0.0, b * (n - 1))
    assert reward(n, 0, p) == -c * n


@given(b=st.floats(0, 100), c=st.floats(0, 10), n=st.integers(0, 30), u=st.integers(0, 30))
def test_reward_jointly_convex(b, c, n, u):
    p = RewardParams(b, c)
    u = min(u, n)

    def f(nn, uu):
        return reward(nn, uu, p)

    tol = 1e-9 * (1 + b + c) * (n + 2)
    # second differences wherever all three grid points satisfy 0 <= u <= n
    if n >= 1 and u <= n - 1:
        assert f(n + 1, u) - 2 * f(n, u) + f(n - 1, u) >= -tol
    if 1 <= u <= n - 1:
        assert f(n, u + 1) - 2 * f(n, u) + f(n, u - 1) >= -tol
        assert f(n + 1, u + 1) - 2 * f(n, u) + f(n - 1, u - 1) >= -tol
    if 1 <= u <= n - 2:
        assert f(n + 1, u - 1) - 2 * f(n, u) + f(n - 1, u + 1) >= -tol


def test_reward_params_validation():
    with pytest.raises(ValidationError):
        RewardParams(-1.0, 1.0)
    with pytest.raises(ValidationError):
        RewardParams(1.0, math.inf)


def test_benefit_from_fuel_first_segment():
    assert benefit_from_fuel(0.10, 5.0, 131) == pytest.approx(65.5)


@pytest.mark.parametrize("args,expected", [((4, 4, 1, 2), 3), ((0, 0, 0, 0), 0), ((3, 0, 2, 1), 6)])
def test_step_hub_state_examples(args, expected):
    assert step_hub_state(*args) == expected


def test_step_hub_state_clamps_and_rejects():
    assert step_hub_state(5, 0, 3, 3, state_cap=8) == 8
    assert step_hub_state(5, 0, 3, 3) == 11
    with pytest.raises(DomainError):
        step_hub_state(2, 3, 0, 0)
    with pytest.raises(DomainError):
        step_hub_state(2, 0, -1, 0)


@given(n=st.integers(0, 50), data=st.data())
def test_step_hub_state_nonnegative(n, data):
    u = data.draw(st.integers(0, n))
    x = data.draw(st.integers(0, 10))
    th = data.draw(st.integers(0, 10))
    assert step_hub_state(n, u, x, th) == n - u + x + th >= 0


def test_hub_state_bounds():
    HubState(60, 0)
    with pytest.raises(DomainError):
        HubState(61, 0)


def test_arrival_pmf_validation():
    with pytest.raises(ValidationError):
        ArrivalPmf(np.array([[0.5, 0.4]]))
    with pytest.raises(ValidationError):
        ArrivalPmf(np.array([[1.2, -0.2]]))
    pmf = ArrivalPmf(np.array([[1.0, 0.0, 0.0], [0.25, 0.5, 0.25]]))
    assert pmf.support_max == 2
    assert pmf.horizon == 1
    with pytest.raises(ValueError):
        pmf.probs[0, 0] = 0.3


def test_arrival_pmf_truncation_folds_tail():
    pmf = ArrivalPmf(np.array([[0.1, 0.2, 0.3, 0.4]]))
    t = pmf.truncated(1)
    np.testing.assert_allclose(t.probs, [[0.1, 0.9]])


def test_poisson_pmf_matches_rates():
    rates = np.array([0.0, 0.5, 2.0])
    pmf = ArrivalPmf.poisson(rates)
    np.testing.assert_allclose(pmf.mean(), rates, atol=1e-10)
    assert pmf.probs[0, 0] == 1.0


def test_binomial_table_rows_sum_to_one():
    B = binomial_table(10, 0.3)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert binomial_table(4, 1.0)[4, 0] == 1.0


def test_reward_table_matches_reward():
    hold, rel = reward_table(P, 6)
    for n in range(7):
        assert hold[n] == reward(n, 0, P)
        assert rel[n] == reward(n, n, P)


def _config(H=1, T=1, b=10.0, c=3.33):
    hubs = [HubParams(i, 1, 0.0, RewardParams(b, c), ArrivalPmf.point_mass(T)) for i in range(1, H + 1)]
    return CorridorConfig(T, hubs)


def _trace(n, u):
    n = np.asarray(n)
    z = np.zeros_like(n)
    return EpisodeTrace(z, z, n, np.asarray(u), np.zeros(n.shape))


def test_episode_reward_single_platoon():
    assert episode_reward(_trace([[2, 0]], [[2, 0]]), _config()) == 10.0


def test_episode_reward_all_zero():
    assert episode_reward(_trace([[0, 0]], [[0, 0]]), _config()) == 0.0


def test_episode_reward_two_hub_hand_built():
    cfg = _config(H=2, T=2)
    n = [[3, 1, 2], [0, 2, 4]]
    u = [[0, 1, 2], [0, 2, 4]]
    expected = sum(reward(n[h][t], u[h][t], cfg.hubs[h].reward) for h in range(2) for t in range(3))
    # term by term: -9.99 + 0 + 10 + 0 + 10 + 30
    assert expected == pytest.approx(-9.99 + 10 + 10 + 30)
    assert episode_reward(_trace(n, u), cfg) == pytest.approx(expected, abs=1e-12)


def test_episode_reward_rejects_incomplete_trace():
    with pytest.raises(ValidationError):
        episode_reward(_trace([[2]], [[2]]), _config())


def test_corridor_validation():
    pmf = ArrivalPmf.point_mass(3)
    hub = HubParams(1, 1, 0.0, RewardParams(1, 1), pmf)
    with pytest.raises(ValidationError):
        CorridorConfig(4, [hub])
    with pytest.raises(ValidationError):
        CorridorConfig(3, [HubParams(2, 1, 0.0, RewardParams(1, 1), pmf)])
    with pytest.raises(ValidationError):
        HubParams(1, 0, 0.0, RewardParams(1, 1), pmf)
    with pytest.raises(ValidationError):
        HubParams(1, 1, 1.5, RewardParams(1, 1), pmf)
    cfg = CorridorConfig(3, [hub])
    assert cfg.with_exit_likelihood(0.4).hubs[0].exit_likelihood == 0.4
