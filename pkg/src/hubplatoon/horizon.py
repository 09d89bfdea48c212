"""Receding-horizon release decisions for the distributed and centralized cases.

Both coordinators solve an ``L``-step Bellman recursion at every step and commit
only the first action. The distributed one knows the upstream releases that
will reach it inside the window; the centralized one knows every arrival.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .errors import DomainError, ValidationError
from .model import ArrivalPmf, RewardParams, binomial_table, reward_table

DEFAULT_L = 30


@dataclass(frozen=True)
class DistributedMessage:
    """Upstream releases ``u[t-tau+1] .. u[t-tau+L]`` known at step ``t``."""

    upstream_releases: tuple[int, ...]

    def __post_init__(self):
        r = tuple(int(x) for x in self.upstream_releases)
        if any(x < 0 for x in r):
            raise ValidationError("upstream releases must be >= 0")
        object.__setattr__(self, "upstream_releases", r)


@dataclass(frozen=True)
class CentralizedWindow:
    """Known arrivals ``x[t+1..t+L]`` and ``theta[t+1..t+L]``."""

    join_arrivals: tuple[int, ...]
    upstream_arrivals: tuple[int, ...]

    def __post_init__(self):
        x = tuple(int(v) for v in self.join_arrivals)
        th = tuple(int(v) for v in self.upstream_arrivals)
        if len(x) != len(th):
            raise ValidationError("window vectors must have the same length")
        if any(v < 0 for v in x + th):
            raise ValidationError("window arrivals must be >= 0")
        object.__setattr__(self, "join_arrivals", x)
        object.__setattr__(self, "upstream_arrivals", th)


def beyond_horizon_value(n: int, reward: RewardParams) -> float:
    """Value credited at the end of a window: every remaining truck is released."""
    return max(0.0, reward.b * (n - 1))


def beyond_horizon_policy(n: int) -> int:
    return n


@njit(cache=True)
def _stochastic_window(xpmf, msg, binom, hold_r, release_r, cap):
    V = release_r.copy()
    rel = np.ones(cap + 1, dtype=np.bool_)
    L, kx = xpmf.shape
    for k in range(L - 1, -1, -1):
        m = msg[k]
        p = np.zeros(kx + m)
        for a in range(kx):
            pa = xpmf[k, a]
            if pa == 0.0:
                continue
            for b in range(m + 1):
                p[a + b] += pa * binom[m, b]
        cont = np.empty(cap + 1)
        for s in range(cap + 1):
            acc = 0.0
            for a in range(p.size):
                j = s + a
                if j > cap:
                    j = cap
                acc += p[a] * V[j]
            cont[s] = acc
        newV = np.empty(cap + 1)
        for s in range(cap + 1):
            hold = hold_r[s] + cont[s]
            release = release_r[s] + cont[0]
            rel[s] = release - hold >= -1e-9
            newV[s] = release if rel[s] else hold
        V = newV
    return V, rel


@njit(cache=True)
def _deterministic_tail(arrivals, hold_r, release_r, cap):
    """Value and release tables for known arrivals; row k is the decision step."""
    L = arrivals.size
    V = np.empty((L + 1, cap + 1))
    rel = np.ones((L + 1, cap + 1), dtype=np.bool_)
    V[L] = release_r
    for k in range(L - 1, -1, -1):
        a = arrivals[k]
        for s in range(cap + 1):
            j = s + a
            if j > cap:
                j = cap
            j0 = a if a < cap else cap
            hold = hold_r[s] + V[k + 1, j]
            release = release_r[s] + V[k + 1, j0]
            rel[k, s] = release - hold >= -1e-9
            V[k, s] = release if rel[k, s] else hold
    return V, rel


def _check_state(n: int, cap: int, L: int) -> None:
    if L < 1:
        raise DomainError(f"window length L={L} must be >= 1")
    if not 0 <= n <= cap:
        raise DomainError(f"n={n} outside 0..{cap}")


class DistributedPlanner:
    """Reusable window solver for one hub; precomputes pmf and binomial tables."""

    def __init__(self, own_join_pmf: ArrivalPmf, exit_likelihood: float,
                 reward: RewardParams, L: int = DEFAULT_L, cap: int = 60):
        if L < 1:
            raise DomainError(f"window length L={L} must be >= 1")
        self.horizon = own_join_pmf.horizon
        self.L = L
        self.cap = cap
        self.hold_r, self.release_r = reward_table(reward, cap)
        self.xpmf = np.ascontiguousarray(own_join_pmf.truncated(cap).probs)
        self.binom = binomial_table(cap, float(exit_likelihood))

    def window(self, t: int, upstream_releases: Sequence[int]):
        """(values, release flags) over ``n`` for the plan made at step ``t``."""
        steps = min(self.L, self.horizon - t)
        if steps <= 0:
            return self.release_r.copy(), np.ones(self.cap + 1, dtype=bool)
        releases = np.zeros(steps, dtype=np.int64)
        r = np.minimum(np.asarray(upstream_releases[:steps], dtype=np.int64), self.cap)
        releases[:r.size] = r
        return _stochastic_window(self.xpmf[t + 1:t + 1 + steps], releases, self.binom,
                                  self.hold_r, self.release_r, self.cap)


def distributed_window(t: int, msg: DistributedMessage, own_join_pmf: ArrivalPmf,
                       exit_likelihood: float, reward: RewardParams, L: int, cap: int):
    """Value and release flags over ``n`` at step ``t`` of the distributed window DP."""
    planner = DistributedPlanner(own_join_pmf, exit_likelihood, reward, L, cap)
    return planner.window(t, msg.upstream_releases)


def distributed_decide(n: int, t: int, msg: DistributedMessage, own_join_pmf: ArrivalPmf,
                       exit_likelihood: float, reward: RewardParams, L: int = DEFAULT_L,
                       cap: int = 60) -> int:
    """First action of the ``L``-step plan given the upstream release message.

    Platoon arrivals inside the window are independent binomial thinnings of
    the announced releases; missing message entries count as no release. The
    window is clipped at the episode end ``T``.
    """
    _check_state(n, cap, L)
    _, rel = distributed_window(t, msg, own_join_pmf, exit_likelihood, reward, L, cap)
    return n if rel[n] else 0


def centralized_tail(join_arrivals: Sequence[int], upstream_arrivals: Sequence[int],
                     reward: RewardParams, cap: int):
    """Full (value, release) tables of the deterministic window DP."""
    a = np.asarray(join_arrivals, dtype=np.int64) + np.asarray(upstream_arrivals, dtype=np.int64)
    hold_r, release_r = reward_table(reward, cap)
    return _deterministic_tail(a, hold_r, release_r, cap)


def centralized_decide(n: int, t: int, window: CentralizedWindow, reward: RewardParams,
                       L: int = DEFAULT_L, cap: int = 60) -> int:
    """First action of the deterministic ``L``-step plan over known arrivals.

    ``window`` may be shorter than ``L`` when the episode ends inside it.
    """
    _check_state(n, cap, L)
    steps = min(L, len(window.join_arrivals))
    if steps == 0:
        return beyond_horizon_policy(n)
    _, rel = centralized_tail(window.join_arrivals[:steps], window.upstream_arrivals[:steps],
                              reward, cap)
    return n if rel[0, n] else 0
