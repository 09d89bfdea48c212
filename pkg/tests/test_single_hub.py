import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hubplatoon.errors import DomainError, ValidationError
from hubplatoon.model import ArrivalPmf, RewardParams, reward
from hubplatoon.oracles import enumerate_single_hub, full_action_bellman
from hubplatoon.single_hub import (ThresholdPolicy, apply_policy, combine_arrival_pmfs,
                                   run_algorithm_1, shifted_index, expected_next,
                                   extract_thresholds, solve_single_hub)
from hubplatoon.model import reward_table
from hubplatoon.verify import SingleHubInstance, check_single_hub, random_single_hub

from conftest import poisson_corridor

P = RewardParams(10.0, 3.33)


def const_pmf(T, row):
    return ArrivalPmf(np.tile(np.asarray(row, float), (T + 1, 1)))


def structural_violations(inst, table):
    """Marginal bound, Delta monotonicity on n >= 1 and tau_T = 1; convexity separately."""
    cap, T, r = inst.cap, inst.horizon, inst.reward
    V = table.values
    out = []
    if (np.diff(V, axis=1) - r.b).max() > 1e-9:
        out.append("marginal bound")
    hold_r, rel_r = reward_table(r, cap)
    pmf = inst.arrivals.truncated(cap).probs
    idx = shifted_index(cap, pmf.shape[1])
    for t in range(T):
        cont = expected_next(V[t + 1], pmf[t + 1], idx)
        delta = rel_r + cont[0] - hold_r - cont
        if np.diff(delta[1:]).min(initial=0) < -1e-9:
            out.append(f"delta monotonicity at t={t}")
    return out


def min_second_difference(values):
    if values.shape[1] < 3:
        return 0.0
    return float((values[:, 2:] - 2 * values[:, 1:-1] + values[:, :-2]).min())


def test_hold_one_release_two():
    pmf = ArrivalPmf(np.array([[1.0, 0.0], [0.5, 0.5]]))
    table, pol = solve_single_hub(pmf, P, 1, 4)
    assert pol.thresholds[0] == 2
    assert pol.thresholds[1] == 1
    # hand backward induction: hold 1 -> -3.33 + 0.5*10; release 2 -> 10 > -6.66 + 0.5*(10+20)
    assert table.values[0, 1] == pytest.approx(-3.33 + 5.0)
    assert table.values[0, 2] == pytest.approx(10.0)
    assert enumerate_single_hub(pmf, P, 1, 4) == pytest.approx(table.values[0, 0], abs=1e-12)


@pytest.mark.parametrize("c", [0.1, 3.33])
def test_no_arrivals_release_immediately(c):
    pmf = ArrivalPmf.point_mass(5)
    _, pol = solve_single_hub(pmf, RewardParams(10.0, c), 5, 6)
    assert (pol.thresholds == 1).all()


def test_free_waiting_accumulates():
    pmf = const_pmf(3, [0.0, 1.0])
    table, pol = solve_single_hub(pmf, RewardParams(10.0, 0.0), 3, 5)
    assert (pol.thresholds[:3] > 1).all()
    assert pol.thresholds[3] == 1
    # brute force over all policies agrees (cap 3 keeps the enumeration small)
    small, _ = solve_single_hub(pmf, RewardParams(10.0, 0.0), 3, 3)
    assert enumerate_single_hub(pmf, RewardParams(10.0, 0.0), 3, 3) == pytest.approx(
        small.values[0, 1], abs=1e-12)


def test_terminal_row_and_threshold():
    pmf = const_pmf(4, [0.6, 0.3, 0.1])
    table, pol = solve_single_hub(pmf, P, 4, 8)
    np.testing.assert_array_equal(table.values[4], [reward(n, n, P) for n in range(9)])
    assert pol.thresholds[-1] == 1


def test_invalid_inputs():
    pmf = ArrivalPmf.point_mass(3)
    with pytest.raises(ValidationError):
        solve_single_hub(pmf, P, 4, 5)
    with pytest.raises(ValidationError):
        solve_single_hub(pmf, None, 3, 5)


def test_generic_convex_reward():
    pmf = const_pmf(3, [0.5, 0.5])

    def quad(n, u):
        return 2.0 * u * u - 1.0 * (n - u)

    table, pol = solve_single_hub(pmf, None, 3, 6, reward_fn=quad)
    assert pol is None
    assert table.values[3, 4] == 32.0


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_matches_enumeration_and_binary_actions(seed):
    ok, msg = check_single_hub(random_single_hub(np.random.default_rng(seed)))
    assert ok, msg


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_structural_properties(seed):
    inst = random_single_hub(np.random.default_rng(seed), max_T=6, max_cap=10)
    table, pol = solve_single_hub(inst.arrivals, inst.reward, inst.horizon, inst.cap)
    assert structural_violations(inst, table) == []
    assert pol.thresholds[-1] == 1
    # release sets are upward closed
    for t in range(inst.horizon + 1):
        rel = table.release[t, 1:]
        if rel.any():
            assert rel[np.argmax(rel):].all()


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_convex_when_cap_unreachable(seed):
    inst = random_single_hub(np.random.default_rng(seed), max_T=5, max_cap=4)
    # no trajectory from n <= 4 can reach this cap, so truncation never acts
    cap = inst.cap + 2 * (inst.horizon + 1)
    table, _ = solve_single_hub(inst.arrivals, inst.reward, inst.horizon, cap)
    assert min_second_difference(table.values[:, :inst.cap + 1]) >= -1e-9


def test_truncation_can_break_convexity():
    # one truck per step, cap 2: holding two trucks loses the third arrival to the cap
    pmf = const_pmf(1, [0.0, 1.0])
    table, _ = solve_single_hub(pmf, P, 1, 2)
    np.testing.assert_allclose(table.values[0], [0.0, 6.67, 10.0])
    assert min_second_difference(table.values) == pytest.approx(-3.34)
    uncapped, _ = solve_single_hub(pmf, P, 1, 10)
    np.testing.assert_allclose(uncapped.values[0, :3], [0.0, 6.67, 13.34])
    assert min_second_difference(uncapped.values[:, :3]) >= -1e-9


def test_full_action_bellman_agrees_with_binary_dp():
    inst = SingleHubInstance(const_pmf(3, [0.2, 0.5, 0.3]), P, 3, 6)
    values, _ = full_action_bellman(inst.arrivals, inst.reward, 3, 6)
    table, _ = solve_single_hub(inst.arrivals, inst.reward, 3, 6)
    for t in range(4):
        np.testing.assert_allclose(table.values[t], values[t], atol=1e-12)


def test_combine_identity_and_bernoulli():
    p = const_pmf(2, [0.2, 0.3, 0.5])
    out = combine_arrival_pmfs(ArrivalPmf.point_mass(2), p)
    np.testing.assert_allclose(out.probs, p.probs)
    bern = const_pmf(2, [0.5, 0.5])
    np.testing.assert_allclose(combine_arrival_pmfs(bern, bern).probs[0], [0.25, 0.5, 0.25])


def test_combine_poisson_additivity():
    a = ArrivalPmf.poisson([1.0] * 3)
    b = ArrivalPmf.poisson([2.0] * 3)
    c = ArrivalPmf.poisson([3.0] * 3)
    out = combine_arrival_pmfs(a, b, cap=60)
    width = max(out.probs.shape[1], c.probs.shape[1])
    pa = np.pad(out.probs, ((0, 0), (0, width - out.probs.shape[1])))
    pc = np.pad(c.probs, ((0, 0), (0, width - c.probs.shape[1])))
    assert 0.5 * np.abs(pa - pc).sum(axis=1).max() < 1e-6


def test_combine_horizon_mismatch():
    with pytest.raises(ValidationError):
        combine_arrival_pmfs(ArrivalPmf.point_mass(2), ArrivalPmf.point_mass(3))


def test_apply_policy():
    pol = ThresholdPolicy([3, 3, 3, 9])
    assert apply_policy(pol, 5, 0) == 5
    assert apply_policy(pol, 2, 0) == 0
    assert apply_policy(pol, 4, 3) == 4
    with pytest.raises(DomainError):
        apply_policy(pol, 1, 4)


def test_csv_round_trip(tmp_path):
    pmf = const_pmf(3, [0.5, 0.5])
    table, pol = solve_single_hub(pmf, P, 3, 4)
    pol.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[:2] == ["t,threshold", f"0,{pol.thresholds[0]}"]
    np.testing.assert_array_equal(ThresholdPolicy.from_csv(tmp_path / "p.csv").thresholds,
                                  pol.thresholds)
    table.to_csv(tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "t,n,value"
    assert len(lines) == 1 + 4 * 5


def test_threshold_above_cap_warns(caplog):
    release = np.array([[True, False, False], [True, False, True], [True, True, True]])
    th = extract_thresholds(release, 2)
    np.testing.assert_array_equal(th, [3, 2, 1])
    assert "no release below the cap at t=0" in caplog.text


def test_algorithm_1_single_hub_is_exact():
    cfg = poisson_corridor(horizon=60).truncated(1)
    pols, fitted = run_algorithm_1(cfg, episodes=3)
    _, direct = solve_single_hub(cfg.hubs[0].join_arrivals, cfg.hubs[0].reward, 60, 60)
    np.testing.assert_array_equal(pols[0].thresholds, direct.thresholds)
    assert fitted == [None]


def test_algorithm_1_full_exit_ignores_upstream():
    cfg = poisson_corridor(horizon=60).truncated(2).with_exit_likelihood(1.0)
    pols, fitted = run_algorithm_1(cfg, episodes=5)
    hub = cfg.hubs[1]
    _, direct = solve_single_hub(hub.join_arrivals, hub.reward, 60, 60)
    np.testing.assert_array_equal(pols[1].thresholds, direct.thresholds)
    assert fitted[1].support_max == 0


def test_algorithm_1_deterministic():
    cfg = poisson_corridor(horizon=90)
    a, _ = run_algorithm_1(cfg, episodes=4, seed=3)
    b, _ = run_algorithm_1(cfg, episodes=4, seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.thresholds, y.thresholds)
