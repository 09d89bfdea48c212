"""Core corridor types, hub dynamics and the platooning reward."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import DomainError, ValidationError

log = logging.getLogger(__name__)

PMF_TOL = 1e-9
DEFAULT_STATE_CAP = 60
DEFAULT_W_MAX = 240


@dataclass(frozen=True)
class RewardParams:
    """Follower benefit ``b`` and per-step waiting cost ``c`` (SEK)."""

    platoon_benefit_per_follower: float
    waiting_cost_per_truck_step: float

    def __post_init__(self):
        for name in ("platoon_benefit_per_follower", "waiting_cost_per_truck_step"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")

    @property
    def b(self) -> float:
        return self.platoon_benefit_per_follower

    @property
    def c(self) -> float:
        return self.waiting_cost_per_truck_step


def benefit_from_fuel(fuel_saving_fraction: float, fuel_cost_per_km: float,
                      distance_km: float) -> float:
    """Per-follower benefit of platooning over one corridor segment."""
    return fuel_saving_fraction * fuel_cost_per_km * distance_km


@dataclass(frozen=True, eq=False)
class ArrivalPmf:
    """Time-indexed pmf over arrival counts.

    ``probs[t, k]`` is the probability of ``k`` arrivals at step ``t``, for
    ``t = 0..T`` and ``k = 0..support_max``.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError(f"pmf table must be 2-D (T+1, K+1), got shape {p.shape}")
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1 + PMF_TOL):
            raise ValidationError("pmf entries must lie in [0, 1]")
        sums = p.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > PMF_TOL)
        if bad.size:
            raise ValidationError(
                f"pmf at t={int(bad[0])} sums to {sums[bad[0]]:.12g}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def horizon(self) -> int:
        return self.probs.shape[0] - 1

    @property
    def support_max(self) -> int:
        nz = np.flatnonzero(self.probs.max(axis=0) > 0)
        return int(nz[-1]) if nz.size else 0

    def at(self, t: int) -> np.ndarray:
        return self.probs[t]

    def mean(self) -> np.ndarray:
        return self.probs @ np.arange(self.probs.shape[1])

    def truncated(self, cap: int) -> "ArrivalPmf":
        """Fold all mass above ``cap`` into the ``cap`` bin."""
        if self.probs.shape[1] <= cap + 1:
            return self
        p = self.probs[:, :cap + 1].copy()
        p[:, cap] += self.probs[:, cap + 1:].sum(axis=1)
        return ArrivalPmf(p)

    @classmethod
    def point_mass(cls, horizon: int, value: int = 0) -> "ArrivalPmf":
        p = np.zeros((horizon + 1, value + 1))
        p[:, value] = 1.0
        return cls(p)

    @classmethod
    def from_vectors(cls, vectors: Sequence[Sequence[float]]) -> "ArrivalPmf":
        width = max(len(v) for v in vectors)
        p = np.zeros((len(vectors), width))
        for t, v in enumerate(vectors):
            p[t, :len(v)] = v
        return cls(p)

    @classmethod
    def poisson(cls, rates: Sequence[float], cap: int = DEFAULT_STATE_CAP,
                tail_tol: float = 1e-14) -> "ArrivalPmf":
        """Poisson pmfs with per-step means ``rates``.

        The support is cut at the smallest ``k <= cap`` whose upper tail is below
        ``tail_tol`` for every step; the tail mass is folded into the top bin.
        """
        rates = np.asarray(rates, dtype=float)
        if np.any(rates < 0) or np.any(~np.isfinite(rates)):
            raise ValidationError("Poisson rates must be finite and >= 0")
        lam_max = float(rates.max()) if rates.size else 0.0
        kmax = int(stats.poisson.isf(tail_tol, lam_max)) + 1 if lam_max > 0 else 0
        kmax = min(max(kmax, 0), cap)
        k = np.arange(kmax + 1)
        p = stats.poisson.pmf(k[None, :], rates[:, None])
        p[:, kmax] += stats.poisson.sf(kmax, rates)
        return cls(p)


@dataclass(frozen=True, eq=False)
class HubParams:
    """One hub of the corridor.

    ``travel_time_steps_from_prev`` and ``exit_likelihood`` describe the road
    segment between hub ``h-1`` and this hub; they are ignored for hub 1.
    """

    hub_index: int
    travel_time_steps_from_prev: int
    exit_likelihood: float
    reward: RewardParams
    join_arrivals: ArrivalPmf
    join_rates: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        if self.hub_index < 1:
            raise ValidationError("hub_index starts at 1")
        if int(self.travel_time_steps_from_prev) < 1:
            raise ValidationError("travel_time_steps_from_prev must be >= 1")
        if not 0.0 <= self.exit_likelihood <= 1.0:
            raise ValidationError(f"exit_likelihood {self.exit_likelihood} not in [0, 1]")
        if self.join_rates is not None:
            r = np.array(self.join_rates, dtype=float)
            r.setflags(write=False)
            object.__setattr__(self, "join_rates", r)


@dataclass(frozen=True, eq=False)
class CorridorConfig:
    horizon: int
    hubs: tuple[HubParams, ...]
    state_cap: int = DEFAULT_STATE_CAP
    w_max: int = DEFAULT_W_MAX
    name: str = "corridor"

    def __post_init__(self):
        object.__setattr__(self, "hubs", tuple(self.hubs))
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if not self.hubs:
            raise ValidationError("a corridor needs at least one hub")
        if self.state_cap < 1:
            raise ValidationError("state_cap must be >= 1")
        for i, hub in enumerate(self.hubs, start=1):
            if hub.hub_index != i:
                raise ValidationError(f"hub at position {i} has hub_index {hub.hub_index}")
            if hub.join_arrivals.horizon != self.horizon:
                raise ValidationError(
                    f"hub {i} arrivals cover t=0..{hub.join_arrivals.horizon}, "
                    f"corridor horizon is {self.horizon}")

    @property
    def num_hubs(self) -> int:
        return len(self.hubs)

    def with_exit_likelihood(self, l: float) -> "CorridorConfig":
        """Copy with the same exit likelihood on every segment."""
        hubs = [HubParams(h.hub_index, h.travel_time_steps_from_prev, l, h.reward,
                          h.join_arrivals, h.join_rates, h.name) for h in self.hubs]
        return CorridorConfig(self.horizon, tuple(hubs), self.state_cap, self.w_max, self.name)

    def truncated(self, num_hubs: int) -> "CorridorConfig":
        return CorridorConfig(self.horizon, self.hubs[:num_hubs], self.state_cap,
                              self.w_max, self.name)


@dataclass(frozen=True)
class HubState:
    trucks_at_hub: int
    time_step: int
    state_cap: int = field(default=DEFAULT_STATE_CAP, compare=False)

    def __post_init__(self):
        if not 0 <= self.trucks_at_hub <= self.state_cap:
            raise DomainError(f"trucks_at_hub {self.trucks_at_hub} outside 0..{self.state_cap}")
        if self.time_step < 0:
            raise DomainError("time_step must be >= 0")


def reward(n: int, u: int, params: RewardParams) -> float:
    """Platooning profit of releasing ``u`` of ``n`` trucks, minus waiting cost."""
    if u < 0 or u > n:
        raise DomainError(f"release u={u} not in 0..n={n}")
    return max(0.0, params.b * (u - 1)) - params.c * (n - u)


def reward_table(params: RewardParams, cap: int) -> tuple[np.ndarray, np.ndarray]:
    """(hold, release_all) rewards for n = 0..cap."""
    n = np.arange(cap + 1, dtype=float)
    hold = -params.c * n
    release = np.maximum(0.0, params.b * (n - 1))
    return hold, release


@lru_cache(maxsize=64)
def binomial_table(cap: int, exit_likelihood: float) -> np.ndarray:
    """``B[m, k] = P(k of m released trucks reach the next hub)``, read-only."""
    m = np.arange(cap + 1)
    b = np.nan_to_num(stats.binom.pmf(m[None, :], m[:, None], 1.0 - exit_likelihood))
    b[0, 0] = 1.0
    b.setflags(write=False)
    return b


def step_hub_state(n: int, u: int, x_next: int, theta_next: int,
                   state_cap: int | None = None) -> int:
    """Next hub occupancy; clamped at ``state_cap`` when one is given."""
    if u < 0 or u > n:
        raise DomainError(f"release u={u} not in 0..n={n}")
    if x_next < 0 or theta_next < 0:
        raise DomainError("arrival counts must be >= 0")
    nxt = n - u + x_next + theta_next
    if state_cap is not None and nxt > state_cap:
        log.debug("hub occupancy %d clamped to %d", nxt, state_cap)
        return state_cap
    return nxt


def episode_reward(trace, config: CorridorConfig) -> float:
    """Total reward of a realized episode, summed over hubs and steps (correctly rounded)."""
    n = np.asarray(trace.n)
    u = np.asarray(trace.u)
    shape = (config.num_hubs, config.horizon + 1)
    if n.shape != shape or u.shape != shape:
        raise ValidationError(f"trace must cover {shape} (hubs, steps), got {n.shape}")
    # fsum makes the total independent of summation order
    return math.fsum(reward(int(n[h, t]), int(u[h, t]), hub.reward)
                     for h, hub in enumerate(config.hubs)
                     for t in range(config.horizon + 1))
