"""Brute-force reference computations for small instances.

These deliberately avoid the solvers' recursions: policies, action sequences
and upstream sample paths are enumerated outright. They are used by the test
suite and by ``platoon verify``.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import ArrivalPmf, RewardParams, reward


def _step_policies(cap: int):
    """All maps ``n -> u`` with ``0 <= u <= n`` for ``n = 0..cap``."""
    return list(itertools.product(*[range(n + 1) for n in range(cap + 1)]))


def enumerate_single_hub(arrivals: ArrivalPmf, params: RewardParams, horizon: int,
                         cap: int) -> float:
    """Best expected reward over every deterministic state-feedback policy.

    The policy at each step ``0..T-1`` is any map from occupancy to a release
    size; everything is released at ``T``. Candidate policies are expanded
    step by step as a batch of occupancy distributions, so the cost is
    ``((cap+1)!)^T`` small vector products.
    """
    probs = arrivals.probs
    size = cap + 1
    pols = _step_policies(cap)
    # per step policy: transition without arrivals and one-step reward
    post = np.zeros((len(pols), size, size))
    rew = np.zeros((len(pols), size))
    for p, pol in enumerate(pols):
        for n, u in enumerate(pol):
            post[p, n, n - u] = 1.0
            rew[p, n] = reward(n, u, params)

    def arrive(dist, row):
        A = np.zeros((size, size))
        for n in range(size):
            for a, pa in enumerate(row):
                A[n, min(n + a, cap)] += pa
        return dist @ A

    init = np.zeros(size)
    for a, pa in enumerate(probs[0]):
        init[min(a, cap)] += pa
    dist = init[None, :]
    acc = np.zeros(1)
    for t in range(horizon):
        acc = (acc[:, None] + dist @ rew.T).ravel()
        held = np.einsum("bs,pst->bpt", dist, post).reshape(-1, size)
        dist = arrive(held, probs[t + 1])
    final = np.array([reward(n, n, params) for n in range(size)])
    return float((acc + dist @ final).max())


def full_action_bellman(arrivals: ArrivalPmf, params: RewardParams, horizon: int, cap: int):
    """Bellman recursion over every release size ``0..n``.

    Returns ``(values, q)`` where ``q[t][n]`` lists the action values for
    ``u = 0..n``.
    """
    probs = arrivals.probs
    V = np.array([reward(n, n, params) for n in range(cap + 1)])
    values = [None] * (horizon + 1)
    qs = [None] * (horizon + 1)
    values[horizon] = V
    for t in range(horizon - 1, -1, -1):
        row = probs[t + 1]
        cont = [sum(pa * V[min(k + a, cap)] for a, pa in enumerate(row)) for k in range(cap + 1)]
        q = [[reward(n, u, params) + cont[n - u] for u in range(n + 1)] for n in range(cap + 1)]
        V = np.array([max(r) for r in q])
        values[t] = V
        qs[t] = q
    return values, qs


def exhaustive_sequences(n0: int, arrivals, params: RewardParams, cap: int,
                         tie_tol: float = 1e-9):
    """Best total reward over every release sequence for known arrivals.

    ``arrivals[k]`` lands after decision ``k``; the last decision releases
    everything. Returns ``(best_value, optimal_first_actions)``; first actions
    within ``tie_tol`` of the best count as optimal.
    """
    if not arrivals:
        return reward(n0, n0, params), {n0}
    by_first = {}

    def rec(k, n, acc, u0):
        if k == len(arrivals):
            total = acc + reward(n, n, params)
            by_first[u0] = max(by_first.get(u0, -np.inf), total)
            return
        for u in range(n + 1):
            rec(k + 1, min(n - u + arrivals[k], cap), acc + reward(n, u, params),
                u if k == 0 else u0)

    rec(0, n0, 0.0, None)
    best = max(by_first.values())
    return best, {u for u, v in by_first.items() if v >= best - tie_tol}


@dataclass
class UpstreamPaths:
    """Every upstream sample path of a small two-hub instance.

    ``paths`` holds tuples ``(prob, d, theta)``: the upstream post-release
    occupancy ``d[s]`` for ``s = 0..`` and the downstream platoon arrivals
    ``theta[t]`` for ``t = 0..T``.
    """

    paths: list
    travel: int
    horizon: int


def enumerate_upstream(thresholds, join: ArrivalPmf, exit_likelihood: float, travel: int,
                       cap: int) -> UpstreamPaths:
    """Simulate the threshold-run upstream hub over all arrival and exit outcomes."""
    T = join.horizon
    probs = join.truncated(cap).probs
    last_s = T - travel  # releases after this never reach the downstream hub in time
    paths = [(1.0, (), (0,) * (travel if travel <= T else T + 1), 0)]
    # state: (prob, d history, theta history, current d)
    for s in range(0, max(last_s + 1, 0)):
        nxt = []
        th = 1 if s >= T else max(int(thresholds[s]), 1)
        for p, dh, thh, d in paths:
            for x, px in enumerate(probs[min(s, T)]):
                if px == 0.0:
                    continue
                n = min(d + x, cap)
                if n >= th:
                    for k in range(n + 1):
                        pk = stats.binom.pmf(k, n, 1.0 - exit_likelihood)
                        if pk == 0.0:
                            continue
                        nxt.append((p * px * pk, dh + (0,), thh + (k,), 0))
                else:
                    nxt.append((p * px, dh + (n,), thh + (0,), n))
        paths = nxt
    return UpstreamPaths([(p, dh, thh) for p, dh, thh, _ in paths], travel, T)


def exact_posterior(up: UpstreamPaths, t: int, observed, cap: int) -> np.ndarray | None:
    """P(D_{t-tau} | theta_1..theta_t = observed), or ``None`` if the history is impossible."""
    s = t - up.travel
    post = np.zeros(cap + 1)
    for p, dh, thh in up.paths:
        if tuple(thh[1:t + 1]) != tuple(observed):
            continue
        post[dh[s] if s >= 0 else 0] += p
    z = post.sum()
    return post / z if z > 0 else None


def steps_since_arrival(observed) -> int:
    for w, th in enumerate(reversed(observed)):
        if th != 0:
            return w
    return len(observed)


def two_hub_history_value(up: UpstreamPaths, own: ArrivalPmf, params: RewardParams,
                          cap: int, policy=None) -> np.ndarray:
    """Optimal expected reward at ``t = 0`` for each ``n``, over history-dependent policies.

    The decision at ``t`` may use the full observed platoon history; predictive
    arrival probabilities come straight from the enumerated upstream paths.
    With ``policy(t, n) -> u`` the value of that fixed policy is returned instead.
    """
    T = up.horizon
    own_p = own.truncated(cap).probs
    by_prefix = defaultdict(lambda: defaultdict(float))
    for p, _, thh in up.paths:
        full = tuple(thh) + (0,) * (T + 1 - len(thh))
        for t in range(T):
            by_prefix[full[1:t + 1]][full[t + 1]] += p

    memo = {}

    def V(t, n, hist):
        if t == T:
            return reward(n, n, params)
        key = (t, n, hist)
        if key in memo:
            return memo[key]
        nxt = by_prefix[hist]
        z = sum(nxt.values())
        best = -np.inf
        actions = range(n + 1) if policy is None else (policy(t, n),)
        for u in actions:
            acc = reward(n, u, params)
            for th, pth in nxt.items():
                for x, px in enumerate(own_p[t + 1]):
                    if px:
                        acc += pth / z * px * V(t + 1, min(n - u + x + th, cap), hist + (th,))
            best = max(best, acc)
        memo[key] = best
        return best

    return np.array([V(0, n, ()) for n in range(cap + 1)])
