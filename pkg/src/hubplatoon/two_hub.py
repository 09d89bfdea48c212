"""Release policies for a hub that observes the platoons of a threshold-run upstream hub.

The downstream coordinator tracks a posterior over the upstream post-release
occupancy ``D`` at time ``t - tau``. Upstream releases are all-or-nothing, so
any nonzero platoon arrival pins ``D`` to zero; the posterior is then a
function of ``w``, the number of steps since the last nonzero arrival, and the
Bellman recursion runs over ``(n, w)``.

Time alignment: the downstream transition ``t -> t+1`` corresponds to the
upstream step ``s + 1 = t + 1 - tau``. Upstream steps before 0 are idle (empty
hub, nothing released).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InferenceError, ValidationError
from .estimator import BinPartition
from .model import (ArrivalPmf, CorridorConfig, DEFAULT_W_MAX, PMF_TOL, RewardParams,
                    binomial_table, reward_table)
from .single_hub import TIE_TOL, ThresholdPolicy, combine_arrival_pmfs, solve_single_hub

log = logging.getLogger(__name__)

THETA_TRIM = 1e-16


def _occupancy_matrix(pmf_row: np.ndarray, cap: int) -> np.ndarray:
    """``M[i, m] = P(min(i + X, cap) = m)``."""
    size = cap + 1
    M = np.zeros((size, size))
    rows = np.repeat(np.arange(size), pmf_row.size)
    cols = np.minimum(rows + np.tile(np.arange(pmf_row.size), size), cap)
    np.add.at(M, (rows, cols), np.tile(pmf_row, size))
    return M


@dataclass(frozen=True, eq=False)
class UpstreamModel:
    """What the downstream hub knows about hub ``h-1``.

    ``release_thresholds[s]`` is the upstream threshold at upstream step ``s``;
    the release set is ``{n >= max(threshold, 1)}``.
    """

    release_thresholds: np.ndarray
    upstream_join_pmf: ArrivalPmf
    exit_likelihood: float
    travel_time_steps: int
    state_cap: int

    def __post_init__(self):
        th = np.array(self.release_thresholds, dtype=np.int64)
        th.setflags(write=False)
        object.__setattr__(self, "release_thresholds", th)
        object.__setattr__(self, "upstream_join_pmf",
                           self.upstream_join_pmf.truncated(self.state_cap))
        if th.size != self.upstream_join_pmf.horizon + 1:
            raise ValidationError("release thresholds and upstream pmf cover different horizons")
        if not 0.0 <= self.exit_likelihood <= 1.0:
            raise ValidationError("exit_likelihood must lie in [0, 1]")
        if self.travel_time_steps < 1:
            raise ValidationError("travel_time_steps must be >= 1")
        object.__setattr__(self, "_cache", {})

    @classmethod
    def from_policy(cls, policy: ThresholdPolicy, upstream_join_pmf: ArrivalPmf,
                    exit_likelihood: float, travel_time_steps: int, state_cap: int):
        return cls(policy.thresholds, upstream_join_pmf, exit_likelihood,
                   travel_time_steps, state_cap)

    @property
    def horizon(self) -> int:
        return self.release_thresholds.size - 1

    def release_mask(self, s: int) -> np.ndarray:
        """Boolean release set over ``0..cap`` at upstream step ``s``."""
        n = np.arange(self.state_cap + 1)
        if s < 0:
            return np.zeros(n.size, dtype=bool)
        th = 1 if s >= self.horizon else max(int(self.release_thresholds[s]), 1)
        return n >= th

    def step(self, t: int):
        """Matrices for the downstream transition ``t -> t+1``.

        Returns ``(P, J0, Jr)``: the post-release transition ``P[i, j]``, the
        joint probability ``J0[i, j]`` of moving ``i -> j`` *and* observing no
        arrival, and ``Jr[i, k]`` of a release from post-release state ``i``
        delivering ``k >= 1`` trucks (column 0 is unused and zero).
        """
        cached = self._cache.get(t)
        if cached is not None:
            return cached
        size = self.state_cap + 1
        s1 = t + 1 - self.travel_time_steps
        if s1 < 0:
            P = np.eye(size)
            out = (P, P.copy(), np.zeros((size, size)))
        else:
            pmf_row = self.upstream_join_pmf.at(min(s1, self.horizon))
            M = _occupancy_matrix(pmf_row, self.state_cap)
            rel = self.release_mask(s1)
            B = binomial_table(self.state_cap, float(self.exit_likelihood))
            Mr = M * rel[None, :]
            P = M * ~rel[None, :]
            P[:, 0] += Mr.sum(axis=1)
            J0 = M * ~rel[None, :]
            J0[:, 0] += Mr @ B[:, 0]
            Jr = Mr @ B
            Jr[:, 0] = 0.0
            out = (P, J0, Jr)
        for a in out:
            a.setflags(write=False)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[t] = out
        return out

    def _check_states(self, t: int, i: int, j: int) -> None:
        cap = self.state_cap
        if not (0 <= i <= cap and 0 <= j <= cap):
            raise DomainError(f"states ({i}, {j}) outside 0..{cap}")
        s = t - self.travel_time_steps
        if self.release_mask(s)[i]:
            raise DomainError(f"i={i} is in the upstream release set at step {s}")
        if self.release_mask(s + 1)[j]:
            raise DomainError(f"j={j} is in the upstream release set at step {s + 1}")


def transition_prob(model: UpstreamModel, t: int, i: int, j: int) -> float:
    """P(D_{s+1} = j | D_s = i) for the upstream post-release occupancy, ``s = t - tau``."""
    model._check_states(t, i, j)
    return float(model.step(t)[0][i, j])


def observation_prob(model: UpstreamModel, t: int, i: int, j: int, theta: int) -> float:
    """P(theta trucks arrive at t+1 | D_s = i, D_{s+1} = j)."""
    model._check_states(t, i, j)
    if theta < 0:
        raise DomainError("theta must be >= 0")
    P, J0, Jr = model.step(t)
    p = P[i, j]
    if p == 0.0:
        raise DomainError(f"transition {i}->{j} has probability 0 at t={t}")
    if theta == 0:
        return float(J0[i, j] / p)
    if j != 0 or theta > model.state_cap:
        return 0.0
    return float(Jr[i, theta] / p)


@dataclass(frozen=True, eq=False)
class FilterState:
    """Posterior over the upstream post-release occupancy."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or np.any(p > 1 + PMF_TOL):
            raise ValidationError("filter entries must lie in [0, 1]")
        if abs(p.sum() - 1.0) > PMF_TOL:
            raise ValidationError(f"filter sums to {p.sum():.12g}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def reset(cls, cap: int) -> "FilterState":
        p = np.zeros(cap + 1)
        p[0] = 1.0
        return cls(p)


def filter_update(eps: FilterState, model: UpstreamModel, t: int,
                  theta_observed: int) -> FilterState:
    """Bayes update of the upstream-occupancy posterior after observing ``theta`` at t+1."""
    if eps.probs.size != model.state_cap + 1:
        raise ValidationError("filter length does not match the model state cap")
    if theta_observed < 0:
        raise DomainError("theta must be >= 0")
    _, J0, Jr = model.step(t)
    if theta_observed == 0:
        z = eps.probs @ J0
        total = z.sum()
        if total <= 0.0:
            raise InferenceError(t, theta_observed)
        return FilterState(z / total)
    if theta_observed > model.state_cap or eps.probs @ Jr[:, theta_observed] <= 0.0:
        raise InferenceError(t, theta_observed)
    return FilterState.reset(model.state_cap)


def filter_from_w(model: UpstreamModel, t: int, w: int) -> FilterState:
    """Posterior at ``t`` after ``w`` empty steps since the last reset.

    ``w > t`` reaches back before the episode start, where the upstream hub is
    idle, so it is equivalent to ``w = t``.
    """
    if w < 0 or t < 0:
        raise DomainError("t and w must be >= 0")
    eps = FilterState.reset(model.state_cap)
    for k in range(max(t - w, 0), t):
        eps = filter_update(eps, model, k, 0)
    return eps


def marginal_theta_pmf(model: UpstreamModel, horizon: int) -> ArrivalPmf:
    """Unconditional pmf of the platoon arrivals at the downstream hub, step by step."""
    cap = model.state_cap
    probs = np.zeros((horizon + 1, cap + 1))
    probs[0, 0] = 1.0
    d = np.zeros(cap + 1)
    d[0] = 1.0
    for t in range(horizon):
        P, J0, Jr = model.step(t)
        probs[t + 1, 1:] = (d @ Jr)[1:]
        probs[t + 1, 0] = (d @ J0).sum()
        d = d @ P
    return ArrivalPmf(_trim_columns(probs))


def _trim_columns(q: np.ndarray) -> np.ndarray:
    """Drop trailing columns below ``THETA_TRIM``, folding their mass into the last kept one."""
    keep = np.flatnonzero(q.max(axis=tuple(range(q.ndim - 1))) > THETA_TRIM)
    last = int(keep[-1]) if keep.size else 0
    if last + 1 == q.shape[-1]:
        return q
    out = q[..., :last + 1].copy()
    out[..., last] += q[..., last + 1:].sum(axis=-1)
    return out


def predictive_theta_tables(model: UpstreamModel, horizon: int, w_max: int):
    """``q[t][w, k] = P(k trucks arrive at t+1 | w steps since the last arrival)``.

    Returned as a list over ``t = 0..T-1``; each entry is trimmed to its
    effective support. The filter is propagated forward for every ``w`` at
    once; ``w = w_max`` holds the exact posterior for ``w_max`` empty steps.
    """
    cap = model.state_cap
    W = w_max
    eta = np.zeros((W + 1, cap + 1))
    eta[:, 0] = 1.0
    out = []
    for t in range(horizon):
        _, J0, Jr = model.step(t)
        z = eta @ J0
        q = eta @ Jr
        q[:, 0] = z.sum(axis=1)
        out.append(_trim_columns(q))
        norm = z.sum(axis=1, keepdims=True)
        nxt = np.zeros_like(eta)
        nxt[0, 0] = 1.0
        ok = norm[:-1, 0] > 0
        body = np.zeros((W, cap + 1))
        body[:, 0] = 1.0
        body[ok] = z[:-1][ok] / norm[:-1][ok]
        nxt[1:] = body
        eta = nxt
    return out


@dataclass(frozen=True, eq=False)
class WThresholdPolicy:
    """Release everything iff ``n >= thresholds[t, min(w, w_max)]``; release all at ``T``."""

    thresholds: np.ndarray

    def __post_init__(self):
        th = np.array(self.thresholds, dtype=np.int64)
        if th.ndim != 2 or np.any(th < 0):
            raise ValidationError("thresholds must be a non-negative (T+1, w_max+1) table")
        th.setflags(write=False)
        object.__setattr__(self, "thresholds", th)

    @property
    def horizon(self) -> int:
        return self.thresholds.shape[0] - 1

    @property
    def w_max(self) -> int:
        return self.thresholds.shape[1] - 1

    def releases_at(self, t: int, n: int, w: int) -> bool:
        if t == self.horizon:
            return True
        return n >= self.thresholds[t, min(w, self.w_max)]

    def decide(self, n: int, t: int, w: int) -> int:
        if not 0 <= t <= self.horizon:
            raise DomainError(f"t={t} outside 0..{self.horizon}")
        return n if self.releases_at(t, n, w) else 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "w", "threshold"])
            for t in range(self.thresholds.shape[0]):
                for w in range(self.thresholds.shape[1]):
                    wr.writerow([t, w, int(self.thresholds[t, w])])

    @classmethod
    def from_csv(cls, path) -> "WThresholdPolicy":
        with open(path, newline="") as fh:
            rows = [(int(r["t"]), int(r["w"]), int(r["threshold"])) for r in csv.DictReader(fh)]
        if not rows:
            raise ValidationError(f"{path}: empty policy")
        T = max(r[0] for r in rows)
        W = max(r[1] for r in rows)
        th = np.full((T + 1, W + 1), -1, dtype=np.int64)
        for t, w, v in rows:
            th[t, w] = v
        if np.any(th < 0):
            raise ValidationError(f"{path}: policy table has gaps")
        return cls(th)


@dataclass(frozen=True, eq=False)
class TwoHubSolution:
    policy: WThresholdPolicy
    values: np.ndarray | None      # (T+1, cap+1, w_max+1) when kept
    release: np.ndarray | None     # same shape, chosen action
    initial_values: np.ndarray     # (cap+1, w_max+1) at t = 0


def solve_two_hub(model: UpstreamModel, own_join_pmf: ArrivalPmf, reward: RewardParams,
                  horizon: int, state_cap: int, w_max: int = DEFAULT_W_MAX,
                  keep_values: bool = True) -> TwoHubSolution:
    """Backward induction over (n, w) for the downstream hub.

    Parameters
    ----------
    model : UpstreamModel
        Upstream hub description; its state cap must equal ``state_cap``.
    own_join_pmf : ArrivalPmf
        Pmf of trucks joining the corridor at this hub.
    keep_values : bool
        Keep the full ``(t, n, w)`` value and action tables. At corridor scale
        this is ~170 MB, so pipelines switch it off.
    """
    if model.state_cap != state_cap:
        raise ValidationError("upstream model and solver use different state caps")
    if own_join_pmf.horizon != horizon or model.horizon != horizon:
        raise ValidationError("horizons of the pmfs and the solver differ")
    if w_max < 1:
        raise ValidationError("w_max must be >= 1")
    cap, W = state_cap, w_max
    hold_r, release_r = reward_table(reward, cap)
    own = own_join_pmf.truncated(cap).probs
    q_tables = predictive_theta_tables(model, horizon, W)
    w_next0 = np.minimum(np.arange(W + 1) + 1, W)
    n_idx = np.arange(cap + 1)

    V = np.repeat(release_r[:, None], W + 1, axis=1)
    thresholds = np.empty((horizon + 1, W + 1), dtype=np.int64)
    thresholds[horizon] = 1
    if keep_values:
        values = np.empty((horizon + 1, cap + 1, W + 1))
        release = np.empty((horizon + 1, cap + 1, W + 1), dtype=bool)
        values[horizon] = V
        release[horizon] = True
    for t in range(horizon - 1, -1, -1):
        cont = _continuation(V, own[t + 1], q_tables[t], n_idx, w_next0, cap)
        hold = hold_r[:, None] + cont
        rel = release_r[:, None] + cont[0][None, :]
        choose = rel - hold >= -TIE_TOL
        V = np.where(choose, rel, hold)
        thresholds[t] = _first_release(choose, cap)
        if keep_values:
            values[t] = V
            release[t] = choose
    policy = WThresholdPolicy(thresholds)
    if keep_values:
        return TwoHubSolution(policy, values, release, values[0])
    return TwoHubSolution(policy, None, None, V)


def _continuation(V, own_row, q, n_idx, w_next0, cap):
    """E[V_{t+1}(n + X + theta, w')] over own joins and predicted platoon arrivals."""
    A = _occupancy_matrix(own_row, cap) @ V
    k = np.arange(1, q.shape[1])
    shift = np.minimum(n_idx[:, None] + k[None, :], cap)
    return q[:, 0][None, :] * A[:, w_next0] + A[shift, 0] @ q[:, 1:].T


def evaluate_threshold_policy(policy: ThresholdPolicy, model: UpstreamModel,
                              own_join_pmf: ArrivalPmf, reward: RewardParams, horizon: int,
                              state_cap: int, w_max: int = DEFAULT_W_MAX) -> np.ndarray:
    """Value over ``(t, n, w)`` of a policy that ignores ``w``, under the true upstream model.

    This is what a single-hub threshold policy actually earns at the
    downstream hub, as opposed to the value its own DP predicts under
    independent arrivals.
    """
    cap, W = state_cap, w_max
    hold_r, release_r = reward_table(reward, cap)
    own = own_join_pmf.truncated(cap).probs
    q_tables = predictive_theta_tables(model, horizon, W)
    w_next0 = np.minimum(np.arange(W + 1) + 1, W)
    n_idx = np.arange(cap + 1)
    values = np.empty((horizon + 1, cap + 1, W + 1))
    values[horizon] = release_r[:, None]
    for t in range(horizon - 1, -1, -1):
        cont = _continuation(values[t + 1], own[t + 1], q_tables[t], n_idx, w_next0, cap)
        rel = np.array([policy.releases_at(t, n) for n in range(cap + 1)])
        values[t] = np.where(rel[:, None], release_r[:, None] + cont[0][None, :],
                             hold_r[:, None] + cont)
    return values


def _first_release(choose: np.ndarray, cap: int) -> np.ndarray:
    body = choose[1:]
    anyrel = body.any(axis=0)
    th = np.where(anyrel, body.argmax(axis=0) + 1, cap + 1)
    if not anyrel.all():
        log.warning("some w have no release below the cap; threshold set to %d", cap + 1)
    return th


def run_algorithm_2(config: CorridorConfig, episodes: int = 50,
                    bins: BinPartition | None = None, seed: int = 0):
    """Two-hub approximate policies for every hub of the corridor.

    Hub 1 gets its exact single-hub policy and hub 2 the exact two-hub policy
    against it. For hubs ``h >= 3`` the platoon arrivals at hub ``h-1`` are
    simulated, fitted by the binned estimator and treated as independent; hub
    ``h-1`` is then modelled as running the single-hub optimal policy for those
    arrivals and hub ``h`` is solved against that model.

    Returns ``(policies, fitted)``; ``fitted[h]`` is the fitted platoon-arrival
    pmf used for the upstream side of hub ``h+1`` (``None`` where unused).
    """
    from .estimator import ArrivalSamples, fit_empirical_pmf
    from .sim import simulate_upstream_arrivals

    if config.num_hubs < 2:
        raise ValidationError("two-hub requires H >= 2")
    if episodes < 1:
        raise ValidationError("episodes must be >= 1")
    bins = bins or BinPartition.uniform(config.horizon, 60)
    cap, T = config.state_cap, config.horizon
    hubs = config.hubs
    _, first = solve_single_hub(hubs[0].join_arrivals, hubs[0].reward, T, cap)
    policies: list = [first]
    fitted: list = [None, None]
    up_policy, up_pmf = first, hubs[0].join_arrivals
    for h in range(1, config.num_hubs):
        if h >= 2:
            samples = simulate_upstream_arrivals(config, policies, h - 1, episodes, seed)
            theta_pmf = fit_empirical_pmf(ArrivalSamples(samples), bins)
            fitted.append(theta_pmf)
            up_pmf = combine_arrival_pmfs(hubs[h - 1].join_arrivals, theta_pmf, cap)
            _, up_policy = solve_single_hub(up_pmf, hubs[h - 1].reward, T, cap)
        model = UpstreamModel.from_policy(up_policy, up_pmf, hubs[h].exit_likelihood,
                                          hubs[h].travel_time_steps_from_prev, cap)
        sol = solve_two_hub(model, hubs[h].join_arrivals, hubs[h].reward, T, cap,
                            config.w_max, keep_values=False)
        policies.append(sol.policy)
    return policies, fitted[:config.num_hubs]
