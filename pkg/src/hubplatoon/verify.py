"""Random small instances and oracle checks, shared by ``platoon verify`` and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .horizon import CentralizedWindow, centralized_decide, centralized_tail
from .model import ArrivalPmf, RewardParams
from .oracles import (enumerate_single_hub, enumerate_upstream, exact_posterior,
                      exhaustive_sequences, full_action_bellman, steps_since_arrival,
                      two_hub_history_value)
from .single_hub import solve_single_hub
from .two_hub import UpstreamModel, filter_from_w, solve_two_hub

ORACLE_TOL = 1e-12
ACTION_TOL = 1e-9


@dataclass
class SingleHubInstance:
    arrivals: ArrivalPmf
    reward: RewardParams
    horizon: int
    cap: int


def random_single_hub(rng: np.random.Generator, max_T: int = 3, max_cap: int = 4) -> SingleHubInstance:
    """T <= 3, cap <= 4, arrival support within {0, 1, 2}."""
    T = int(rng.integers(1, max_T + 1))
    cap = int(rng.integers(1, max_cap + 1))
    width = int(rng.integers(1, 4))
    probs = np.zeros((T + 1, 3))
    probs[:, :width] = rng.dirichlet(np.ones(width), size=T + 1)
    reward = RewardParams(float(rng.uniform(0.5, 10.0)), float(rng.uniform(0.1, 5.0)))
    return SingleHubInstance(ArrivalPmf(probs), reward, T, cap)


def dp_expected_reward(inst: SingleHubInstance) -> float:
    table, _ = solve_single_hub(inst.arrivals, inst.reward, inst.horizon, inst.cap)
    init = np.zeros(inst.cap + 1)
    for a, pa in enumerate(inst.arrivals.probs[0]):
        init[min(a, inst.cap)] += pa
    return float(init @ table.values[0])


def check_single_hub(inst: SingleHubInstance) -> tuple[bool, str]:
    dp = dp_expected_reward(inst)
    brute = enumerate_single_hub(inst.arrivals, inst.reward, inst.horizon, inst.cap)
    if abs(dp - brute) > ORACLE_TOL:
        return False, f"DP {dp!r} vs enumeration {brute!r}"
    _, qs = full_action_bellman(inst.arrivals, inst.reward, inst.horizon, inst.cap)
    for t, q in enumerate(qs[:-1]):
        for n, row in enumerate(q):
            top = max(row)
            best = {u for u, v in enumerate(row) if v >= top - ACTION_TOL}
            if not best <= {0, n}:
                return False, f"optimal actions {sorted(best)} at t={t}, n={n}"
    return True, ""


@dataclass
class TwoHubInstance:
    thresholds: np.ndarray
    upstream: ArrivalPmf
    own: ArrivalPmf
    exit_likelihood: float
    travel: int
    reward: RewardParams
    cap: int

    @property
    def horizon(self) -> int:
        return self.own.horizon

    def model(self) -> UpstreamModel:
        return UpstreamModel(self.thresholds, self.upstream, self.exit_likelihood,
                             self.travel, self.cap)


def random_two_hub(rng: np.random.Generator, max_T: int = 5, cap: int = 4) -> TwoHubInstance:
    T = int(rng.integers(2, max_T + 1))
    travel = int(rng.integers(1, 3))
    up = ArrivalPmf(rng.dirichlet(np.ones(2), size=T + 1))
    own = ArrivalPmf(rng.dirichlet(np.ones(2), size=T + 1))
    thresholds = rng.integers(1, cap + 1, size=T + 1)
    l = float(rng.choice([0.0, 0.25, 0.5]))
    reward = RewardParams(float(rng.uniform(1.0, 8.0)), float(rng.uniform(0.2, 3.0)))
    return TwoHubInstance(thresholds, up, own, l, travel, reward, cap)


def check_w_sufficiency(inst: TwoHubInstance) -> tuple[bool, str]:
    """Exact history posteriors equal the filter rebuilt from ``w`` alone."""
    model = inst.model()
    paths = enumerate_upstream(inst.thresholds, inst.upstream, inst.exit_likelihood,
                               inst.travel, inst.cap)
    for t in range(inst.horizon + 1):
        for obs in {tuple(th[1:t + 1]) for _, _, th in paths.paths}:
            exact = exact_posterior(paths, t, obs, inst.cap)
            if exact is None:
                continue
            got = filter_from_w(model, t, steps_since_arrival(obs)).probs
            if np.abs(exact - got).max() > ORACLE_TOL:
                return False, f"t={t} history {obs}: {exact} vs {got}"
    return True, ""


def check_two_hub_value(inst: TwoHubInstance) -> tuple[bool, str]:
    """(n, w) DP value at t=0 equals the best history-dependent value."""
    paths = enumerate_upstream(inst.thresholds, inst.upstream, inst.exit_likelihood,
                               inst.travel, inst.cap)
    sol = solve_two_hub(inst.model(), inst.own, inst.reward, inst.horizon, inst.cap,
                        w_max=inst.horizon + 1, keep_values=False)
    brute = two_hub_history_value(paths, inst.own, inst.reward, inst.cap)
    err = float(np.abs(sol.initial_values[:, 0] - brute).max())
    return err <= 1e-9, f"max error {err:.3g}"


def check_centralized(rng: np.random.Generator, max_T: int = 6, cap: int = 6) -> tuple[bool, str]:
    T = int(rng.integers(1, max_T + 1))
    x = [int(v) for v in rng.integers(0, 3, size=T)]
    th = [int(v) for v in rng.integers(0, 2, size=T)]
    reward = RewardParams(float(rng.uniform(0.5, 10.0)), float(rng.uniform(0.1, 5.0)))
    n0 = int(rng.integers(0, cap + 1))
    arrivals = [min(a + b, cap) for a, b in zip(x, th)]
    best, first = exhaustive_sequences(n0, arrivals, reward, cap)
    V, _ = centralized_tail(x, th, reward, cap)
    u = centralized_decide(n0, 0, CentralizedWindow(x, th), reward, L=T, cap=cap)
    if abs(V[0, n0] - best) > ORACLE_TOL:
        return False, f"window DP {V[0, n0]!r} vs search {best!r}"
    if u not in first:
        return False, f"decided {u}, optimal first actions {sorted(first)}"
    return True, ""


def run_all(instances: int = 200, seed: int = 0, out=print) -> bool:
    rng = np.random.default_rng(seed)
    suites = [
        ("single-hub DP vs policy enumeration", lambda: check_single_hub(random_single_hub(rng))),
        ("centralized window vs exhaustive search", lambda: check_centralized(rng)),
        ("filter w-sufficiency vs history enumeration",
         lambda: check_w_sufficiency(random_two_hub(rng))),
        ("two-hub (n,w) value vs history-dependent optimum",
         lambda: check_two_hub_value(random_two_hub(rng, max_T=4, cap=3))),
    ]
    counts = {"single-hub DP vs policy enumeration": instances}
    ok_all = True
    for name, check in suites:
        n = counts.get(name, max(instances // 4, 1))
        failures = []
        for i in range(n):
            ok, msg = check()
            if not ok:
                failures.append(f"instance {i}: {msg}")
        ok_all &= not failures
        out(f"{'PASS' if not failures else 'FAIL'} {name} ({n} instances)")
        for f in failures[:5]:
            out(f"  {f}")
    return ok_all
