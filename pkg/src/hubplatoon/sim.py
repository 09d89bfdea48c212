"""Monte Carlo simulation of a hub corridor under per-hub release policies.

Hubs only influence their downstream neighbours, so an episode is simulated one
hub at a time in corridor order: hub ``h`` runs over the whole day, then its
platoons are thinned and delayed into the arrival stream of hub ``h+1``. This
gives every coordinator exactly the information its binding allows at each
step (the centralized binding is handed the realized future by design).

Random streams are split per hub and per purpose (joins, exits, travel times),
so every binding sees the same joining-truck sample path for a given seed.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ContractViolation, ValidationError
from .horizon import DEFAULT_L, DistributedPlanner, centralized_tail
from .model import CorridorConfig, HubParams
from .single_hub import ThresholdPolicy
from .two_hub import WThresholdPolicy

log = logging.getLogger(__name__)

STEPS_PER_HOUR = 60
FIT_STREAM = 0x5EED


@dataclass(frozen=True)
class TravelTimeModel:
    """Travel time on one segment, in whole steps.

    ``truncated-normal`` draws are rounded to the nearest step and redrawn
    while below ``min_steps``.
    """

    kind: str = "deterministic"
    mean_steps: int = 1
    std_steps: float = 0.0
    min_steps: int = 1

    def __post_init__(self):
        if self.kind not in ("deterministic", "truncated-normal"):
            raise ValidationError(f"unknown travel-time kind {self.kind!r}")
        if self.std_steps < 0 or self.min_steps < 1 or self.mean_steps < self.min_steps:
            raise ValidationError("need std >= 0 and mean >= min_steps >= 1")

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind == "deterministic" or self.std_steps == 0:
            return self.mean_steps
        while True:
            d = int(round(rng.normal(self.mean_steps, self.std_steps)))
            if d >= self.min_steps:
                return d


@dataclass(frozen=True)
class DistributedBinding:
    horizon: int = DEFAULT_L


@dataclass(frozen=True)
class CentralizedBinding:
    horizon: int = DEFAULT_L


PolicyBinding = Union[ThresholdPolicy, WThresholdPolicy, DistributedBinding,
                      CentralizedBinding, Callable[[int, int], int]]


@dataclass(eq=False)
class EpisodeTrace:
    """Realized episode. Arrays are indexed ``[hub, t]`` with hubs from 0.

    ``exited[h]`` counts trucks lost on the segment into hub ``h``,
    ``in_flight[h]`` survivors bound for hub ``h`` that arrive after ``T``,
    ``overflow[h]`` trucks dropped by the occupancy cap, and ``left_corridor``
    the trucks released by the last hub.
    """

    x: np.ndarray
    theta: np.ndarray
    n: np.ndarray
    u: np.ndarray
    r: np.ndarray
    seed: object = None
    scenario: str = ""
    overflow: np.ndarray = field(default=None)
    exited: np.ndarray = field(default=None)
    in_flight: np.ndarray = field(default=None)
    left_corridor: int = 0

    @property
    def total_reward(self) -> float:
        return math.fsum(self.r.ravel().tolist())

    def hub_rewards(self) -> np.ndarray:
        return np.array([math.fsum(row.tolist()) for row in self.r])


def _streams(seed, num_hubs: int):
    entropy = list(seed) if isinstance(seed, (tuple, list)) else seed
    hubs = np.random.SeedSequence(entropy).spawn(num_hubs)
    return [[np.random.default_rng(s) for s in hub.spawn(3)] for hub in hubs]


def sample_join_arrivals(hub: HubParams, t: int, rng: np.random.Generator) -> int:
    """Trucks joining at ``hub`` at step ``t``: Poisson(rate) clamped at the pmf support."""
    top = hub.join_arrivals.probs.shape[1] - 1
    if hub.join_rates is not None:
        return min(int(rng.poisson(hub.join_rates[t])), top)
    return int(rng.choice(top + 1, p=hub.join_arrivals.at(t)))


def sample_join_path(hub: HubParams, horizon: int, rng: np.random.Generator) -> np.ndarray:
    top = hub.join_arrivals.probs.shape[1] - 1
    if hub.join_rates is not None:
        return np.minimum(rng.poisson(hub.join_rates[:horizon + 1]), top).astype(np.int64)
    probs = hub.join_arrivals.probs
    cdf = np.cumsum(probs, axis=1)
    draws = rng.random(horizon + 1)
    x = (draws[:, None] > cdf[:horizon + 1]).sum(axis=1)
    return np.minimum(x, top).astype(np.int64)


def propagate_platoon(u: int, exit_likelihood: float, travel: TravelTimeModel,
                      rng: np.random.Generator,
                      travel_rng: np.random.Generator | None = None):
    """Survivors of a released platoon and the steps until they reach the next hub.

    Each truck exits independently with ``exit_likelihood``; the platoon
    travels as one unit, so a single delay is drawn (from ``travel_rng`` when
    given). Returns ``(0, None)`` when nothing survives.
    """
    if u < 0:
        raise ValidationError("release size must be >= 0")
    if u == 0:
        return 0, None
    survivors = int(rng.binomial(u, 1.0 - exit_likelihood))
    if survivors == 0:
        return 0, None
    return survivors, travel.sample(travel_rng if travel_rng is not None else rng)


def _decide_threshold(policy: ThresholdPolicy, x, theta, cap, T, **_):
    th = policy.thresholds.tolist()

    def decide(t, n):
        return n if (t == T or n >= th[t]) else 0
    return decide


def _decide_w(policy: WThresholdPolicy, x, theta, cap, T, **_):
    th = policy.thresholds
    W = policy.w_max
    state = {"w": 0}
    theta_l = theta.tolist()

    def decide(t, n):
        if t > 0:
            state["w"] = 0 if theta_l[t] != 0 else min(state["w"] + 1, W)
        if t == T:
            return n
        return n if n >= th[t, state["w"]] else 0
    return decide


def _decide_distributed(binding: DistributedBinding, x, theta, cap, T, hub, upstream_u,
                        **_):
    planner = DistributedPlanner(hub.join_arrivals, hub.exit_likelihood, hub.reward,
                                 binding.horizon, cap)
    tau = hub.travel_time_steps_from_prev
    L = binding.horizon
    up = upstream_u

    def decide(t, n):
        if t == T:
            return n
        if n == 0:
            return 0
        msg = np.zeros(L, dtype=np.int64)
        if up is not None:
            # only upstream decisions already taken (s <= t) can be announced
            lo = t - tau + 1
            hi = min(t - tau + L, t)
            if hi >= max(lo, 0):
                s0 = max(lo, 0)
                msg[s0 - lo:hi - lo + 1] = up[s0:hi + 1]
        _, rel = planner.window(t, msg)
        return n if rel[n] else 0
    return decide


def _decide_centralized(binding: CentralizedBinding, x, theta, cap, T, hub, **_):
    arrivals = (x + theta).astype(np.int64)
    L = binding.horizon
    hold_reward = hub.reward
    tail = {}

    def decide(t, n):
        if t == T:
            return n
        if n == 0:
            return 0
        if t + L >= T:
            # once the window reaches T every re-plan is a suffix of the same DP
            if "rel" not in tail:
                tail["t0"] = t
                tail["rel"] = centralized_tail(arrivals[t + 1:], np.zeros(T - t, np.int64),
                                               hold_reward, cap)[1]
            return n if tail["rel"][t - tail["t0"], n] else 0
        _, rel = centralized_tail(arrivals[t + 1:t + 1 + L], np.zeros(L, np.int64),
                                  hold_reward, cap)
        return n if rel[0, n] else 0
    return decide


def _controller(binding, **ctx):
    if isinstance(binding, ThresholdPolicy):
        if binding.horizon != ctx["T"]:
            raise ValidationError("policy horizon does not match the corridor")
        return _decide_threshold(binding, **ctx)
    if isinstance(binding, WThresholdPolicy):
        if binding.horizon != ctx["T"]:
            raise ValidationError("policy horizon does not match the corridor")
        if ctx["hub"].hub_index == 1:
            raise ValidationError("hub 1 has no upstream arrivals to track")
        return _decide_w(binding, **ctx)
    if isinstance(binding, DistributedBinding):
        return _decide_distributed(binding, **ctx)
    if isinstance(binding, CentralizedBinding):
        return _decide_centralized(binding, **ctx)
    if callable(binding):
        return lambda t, n: binding(n, t)
    raise ValidationError(f"unsupported binding {binding!r}")


def _run_hub(decide, x, theta, cap):
    T = x.size - 1
    n_arr = np.zeros(T + 1, dtype=np.int64)
    u_arr = np.zeros(T + 1, dtype=np.int64)
    xs, ths = x.tolist(), theta.tolist()
    overflow = 0
    n = xs[0] + ths[0]
    if n > cap:
        overflow += n - cap
        n = cap
    for t in range(T + 1):
        u = decide(t, n)
        if not (isinstance(u, (int, np.integer)) and 0 <= u <= n):
            raise ContractViolation(f"policy released {u!r} of {n} trucks at t={t}")
        n_arr[t] = n
        u_arr[t] = u
        if t < T:
            n = n - u + xs[t + 1] + ths[t + 1]
            if n > cap:
                overflow += n - cap
                n = cap
    if overflow:
        log.warning("occupancy cap %d hit; %d trucks dropped", cap, overflow)
    return n_arr, u_arr, overflow


def _propagate(u_arr, hub_next: HubParams, travel: TravelTimeModel, per_truck: bool,
               rng_exit, rng_travel, T):
    theta = np.zeros(T + 1, dtype=np.int64)
    exited = in_flight = 0
    for t in np.flatnonzero(u_arr).tolist():
        u = int(u_arr[t])
        if per_truck:
            survivors = int(rng_exit.binomial(u, 1.0 - hub_next.exit_likelihood))
            delays = [travel.sample(rng_travel) for _ in range(survivors)]
        else:
            survivors, d = propagate_platoon(u, hub_next.exit_likelihood, travel,
                                             rng_exit, rng_travel)
            delays = [d] * survivors
        exited += u - survivors
        for d in delays:
            if t + d <= T:
                theta[t + d] += 1
            else:
                in_flight += 1
    return theta, exited, in_flight


def travel_models(config: CorridorConfig, std_steps: float = 0.0):
    """Per-segment travel-time models; entry ``h`` covers the road into hub ``h``."""
    kind = "truncated-normal" if std_steps > 0 else "deterministic"
    return [TravelTimeModel(kind, hub.travel_time_steps_from_prev, std_steps, 1)
            for hub in config.hubs]


def run_episode(config: CorridorConfig, bindings: Sequence, rng_seed,
                travel_std_steps: float = 0.0, per_truck_travel: bool = False,
                scenario: str = "") -> EpisodeTrace:
    """Simulate one day of the corridor.

    ``bindings[h]`` drives hub ``h``; trailing ``None`` entries leave hubs
    unsimulated (their arrivals are still recorded).
    """
    H, T, cap = config.num_hubs, config.horizon, config.state_cap
    if len(bindings) != H:
        raise ValidationError(f"expected {H} bindings, got {len(bindings)}")
    streams = _streams(rng_seed, H)
    travel = travel_models(config, travel_std_steps)
    shape = (H, T + 1)
    x = np.zeros(shape, dtype=np.int64)
    theta = np.zeros(shape, dtype=np.int64)
    n = np.zeros(shape, dtype=np.int64)
    u = np.zeros(shape, dtype=np.int64)
    overflow = np.zeros(H, dtype=np.int64)
    exited = np.zeros(H, dtype=np.int64)
    in_flight = np.zeros(H, dtype=np.int64)
    left = 0
    for h, hub in enumerate(config.hubs):
        rng_join, _, _ = streams[h]
        x[h] = sample_join_path(hub, T, rng_join)
        binding = bindings[h]
        if binding is None:
            break
        decide = _controller(binding, x=x[h], theta=theta[h], cap=cap, T=T, hub=hub,
                             upstream_u=u[h - 1] if h > 0 else None)
        n[h], u[h], overflow[h] = _run_hub(decide, x[h], theta[h], cap)
        if h + 1 < H:
            _, rng_exit, rng_travel = streams[h + 1]
            theta[h + 1], exited[h + 1], in_flight[h + 1] = _propagate(
                u[h], config.hubs[h + 1], travel[h + 1], per_truck_travel,
                rng_exit, rng_travel, T)
        else:
            left = int(u[h].sum())
    r = np.zeros(shape)
    for h, hub in enumerate(config.hubs):
        b, c = hub.reward.b, hub.reward.c
        r[h] = np.maximum(0.0, b * (u[h] - 1)) - c * (n[h] - u[h])
    return EpisodeTrace(x, theta, n, u, r, rng_seed, scenario, overflow, exited,
                        in_flight, left)


def simulate_upstream_arrivals(config: CorridorConfig, policies: Sequence, hub: int,
                               episodes: int, seed: int = 0) -> np.ndarray:
    """Platoon arrivals at hub ``hub`` (0-based) over ``episodes`` fitting runs.

    Hubs ``0..hub-1`` run ``policies``; travel is deterministic. Returns an
    ``(episodes, T+1)`` count table.
    """
    bindings = list(policies[:hub]) + [None] * (config.num_hubs - hub)
    out = np.empty((episodes, config.horizon + 1), dtype=np.int64)
    for e in range(episodes):
        trace = run_episode(config, bindings, (seed, e, FIT_STREAM))
        out[e] = trace.theta[hub]
    return out


def hour_of(T: int, steps_per_hour: int = STEPS_PER_HOUR) -> np.ndarray:
    hours = max(1, -(-T // steps_per_hour))
    return np.minimum(np.arange(T + 1) // steps_per_hour, hours - 1)


@dataclass(eq=False)
class ExperimentResult:
    """Aggregates of one binding set over many episodes."""

    label: str
    seeds: list
    totals: np.ndarray            # (E,) corridor reward per episode
    hub_totals: np.ndarray        # (E, H)
    hourly_reward: np.ndarray     # (E, H, hours)
    release_count: np.ndarray     # (H, hours) number of nonzero releases
    release_sum: np.ndarray
    release_sumsq: np.ndarray
    traces: list | None = None

    @property
    def episodes(self) -> int:
        return self.totals.size

    @property
    def mean_daily_reward(self) -> float:
        return float(self.totals.mean())

    @property
    def std_error(self) -> float:
        if self.totals.size < 2:
            return 0.0
        return float(self.totals.std(ddof=1) / math.sqrt(self.totals.size))

    def release_size_stats(self):
        """Mean and standard deviation of nonzero release sizes per (hub, hour)."""
        cnt = self.release_count
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(cnt > 0, self.release_sum / np.maximum(cnt, 1), 0.0)
            var = np.where(cnt > 0, self.release_sumsq / np.maximum(cnt, 1) - mean ** 2, 0.0)
        return mean, np.sqrt(np.maximum(var, 0.0))


def _episode_job(args):
    config, bindings, seed, std, per_truck, keep = args
    tr = run_episode(config, bindings, seed, std, per_truck)
    return tr if keep else _strip(tr)


def _strip(tr: EpisodeTrace) -> EpisodeTrace:
    return EpisodeTrace(np.empty((0, 0)), np.empty((0, 0)), np.empty((0, 0)), tr.u, tr.r,
                        tr.seed, tr.scenario, tr.overflow, tr.exited, tr.in_flight,
                        tr.left_corridor)


def run_experiment(config: CorridorConfig, bindings: Sequence, episodes: int = 50,
                   seeds: Sequence | None = None, travel_std_steps: float = 0.0,
                   per_truck_travel: bool = False, label: str = "",
                   keep_traces: bool = False, workers: int = 1) -> ExperimentResult:
    """Run ``episodes`` seeded episodes and aggregate rewards and release sizes."""
    seeds = list(seeds) if seeds else list(range(episodes))
    if len(seeds) < 1:
        raise ValidationError("need at least one episode")
    H, T = config.num_hubs, config.horizon
    hours_idx = hour_of(T)
    hours = int(hours_idx[-1]) + 1
    jobs = [(config, bindings, s, travel_std_steps, per_truck_travel, keep_traces)
            for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            traces = list(pool.map(_episode_job, jobs))
    else:
        traces = [_episode_job(j) for j in jobs]
    E = len(traces)
    totals = np.array([tr.total_reward for tr in traces])
    hub_totals = np.array([tr.hub_rewards() for tr in traces])
    hourly = np.zeros((E, H, hours))
    cnt = np.zeros((H, hours))
    s1 = np.zeros((H, hours))
    s2 = np.zeros((H, hours))
    for e, tr in enumerate(traces):
        for h in range(H):
            hourly[e, h] = np.bincount(hours_idx, weights=tr.r[h], minlength=hours)
            rel = tr.u[h] > 0
            uu = tr.u[h][rel].astype(float)
            hh = hours_idx[rel]
            cnt[h] += np.bincount(hh, minlength=hours)
            s1[h] += np.bincount(hh, weights=uu, minlength=hours)
            s2[h] += np.bincount(hh, weights=uu ** 2, minlength=hours)
    return ExperimentResult(label, seeds, totals, hub_totals, hourly, cnt, s1, s2,
                            traces if keep_traces else None)
