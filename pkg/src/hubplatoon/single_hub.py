"""Backward induction for one hub with independent arrivals.

The optimal release at every state is either nothing or everything, so the
Bellman maximisation only compares those two actions. With the piecewise-linear
reward the release set is ``{n >= threshold_t}``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, ValidationError
from .estimator import BinPartition
from .model import ArrivalPmf, CorridorConfig, RewardParams, reward_table

log = logging.getLogger(__name__)

TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ValueTable:
    """``values[t, n]`` is the optimal value-to-go; ``release[t, n]`` the chosen action."""

    values: np.ndarray
    release: np.ndarray

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @property
    def state_cap(self) -> int:
        return self.values.shape[1] - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "n", "value"])
            for t in range(self.values.shape[0]):
                for n in range(self.values.shape[1]):
                    w.writerow([t, n, repr(float(self.values[t, n]))])


@dataclass(frozen=True, eq=False)
class ThresholdPolicy:
    """Release everything iff ``n >= thresholds[t]``; release all at ``t = T``."""

    thresholds: np.ndarray

    def __post_init__(self):
        th = np.array(self.thresholds, dtype=np.int64)
        if th.ndim != 1 or th.size < 2 or np.any(th < 0):
            raise ValidationError("thresholds must be a non-negative vector over t=0..T")
        th.setflags(write=False)
        object.__setattr__(self, "thresholds", th)

    @property
    def horizon(self) -> int:
        return self.thresholds.size - 1

    def releases_at(self, t: int, n: int) -> bool:
        return t == self.horizon or n >= self.thresholds[t]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "threshold"])
            for t, th in enumerate(self.thresholds):
                w.writerow([t, int(th)])

    @classmethod
    def from_csv(cls, path) -> "ThresholdPolicy":
        with open(path, newline="") as fh:
            rows = [(int(r["t"]), int(r["threshold"])) for r in csv.DictReader(fh)]
        rows.sort()
        if [t for t, _ in rows] != list(range(len(rows))):
            raise ValidationError(f"{path}: thresholds must cover t=0..T without gaps")
        return cls(np.array([th for _, th in rows]))


def apply_policy(policy: ThresholdPolicy, n: int, t: int) -> int:
    if not 0 <= t <= policy.horizon:
        raise DomainError(f"t={t} outside 0..{policy.horizon}")
    if n < 0:
        raise DomainError("n must be >= 0")
    return n if policy.releases_at(t, n) else 0


def combine_arrival_pmfs(a: ArrivalPmf, b: ArrivalPmf, cap: int | None = None) -> ArrivalPmf:
    """Pmf of the sum of two independent arrival streams, step by step."""
    if a.horizon != b.horizon:
        raise ValidationError(f"horizons differ: {a.horizon} vs {b.horizon}")
    width = a.probs.shape[1] + b.probs.shape[1] - 1
    out = np.empty((a.horizon + 1, width))
    for t in range(a.horizon + 1):
        out[t] = np.convolve(a.probs[t], b.probs[t])
    # convolution round-off can leave tiny negatives
    np.clip(out, 0.0, None, out=out)
    pmf = ArrivalPmf(out)
    return pmf.truncated(cap) if cap is not None else pmf


def shifted_index(cap: int, width: int) -> np.ndarray:
    """``idx[k, a] = min(k + a, cap)``: next occupancy for ``k`` held trucks and ``a`` arrivals."""
    return np.minimum(np.arange(cap + 1)[:, None] + np.arange(width)[None, :], cap)


def expected_next(values_next: np.ndarray, pmf_next: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """E[V(min(k + A, cap))] for every held count ``k``."""
    return values_next[idx[:, :pmf_next.size]] @ pmf_next


def solve_single_hub(arrivals: ArrivalPmf, reward: RewardParams | None, horizon: int,
                     cap: int, reward_fn: Callable[[int, int], float] | None = None,
                     ) -> tuple[ValueTable, ThresholdPolicy | None]:
    """Finite-horizon optimal release policy for one hub.

    Parameters
    ----------
    arrivals : ArrivalPmf
        Pmf of the total arrivals (joining plus upstream) at each step ``0..T``.
    reward : RewardParams
        Piecewise-linear reward. Pass ``None`` together with ``reward_fn`` to
        solve for another reward that is convex in (n, u).
    horizon : int
        Final step ``T``; everything is released at ``T``.
    cap : int
        Occupancy truncation; arrivals beyond it land in the cap state.

    Returns
    -------
    (ValueTable, ThresholdPolicy or None)
        The threshold policy is only extracted for the piecewise-linear reward.
    """
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    if arrivals.horizon != horizon:
        raise ValidationError(f"arrival pmf covers t=0..{arrivals.horizon}, horizon is {horizon}")
    if reward is not None:
        hold_r, release_r = reward_table(reward, cap)
    elif reward_fn is not None:
        hold_r = np.array([reward_fn(n, 0) for n in range(cap + 1)], dtype=float)
        release_r = np.array([reward_fn(n, n) for n in range(cap + 1)], dtype=float)
    else:
        raise ValidationError("either reward or reward_fn is required")

    pmf = arrivals.truncated(cap).probs
    idx = shifted_index(cap, pmf.shape[1])
    values = np.empty((horizon + 1, cap + 1))
    release = np.zeros((horizon + 1, cap + 1), dtype=bool)
    values[horizon] = release_r
    release[horizon] = True
    for t in range(horizon - 1, -1, -1):
        cont = expected_next(values[t + 1], pmf[t + 1], idx)
        hold = hold_r + cont
        rel = release_r + cont[0]
        release[t] = rel - hold >= -TIE_TOL
        values[t] = np.where(release[t], rel, hold)
    table = ValueTable(values, release)
    if reward is None:
        return table, None
    return table, ThresholdPolicy(extract_thresholds(release, cap))


def extract_thresholds(release: np.ndarray, cap: int) -> np.ndarray:
    """First ``n >= 1`` at which release is weakly preferred, per row."""
    horizon = release.shape[0] - 1
    th = np.empty(horizon + 1, dtype=np.int64)
    for t in range(horizon + 1):
        hits = np.flatnonzero(release[t, 1:])
        if hits.size:
            th[t] = hits[0] + 1
        else:
            th[t] = cap + 1
            log.warning("no release below the cap at t=%d; threshold set to %d", t, cap + 1)
    th[horizon] = 1
    return th


def run_algorithm_1(config: CorridorConfig, episodes: int = 50,
                    bins: BinPartition | None = None, seed: int = 0):
    """Single-hub approximate policies for every hub of the corridor.

    Hubs are processed in order. For hub ``h >= 2`` the upstream arrivals are
    simulated over ``episodes`` runs of the already-solved hubs, fitted with
    the time-binned frequency estimator, combined with the hub's own joining
    arrivals and fed to :func:`solve_single_hub`.

    Returns ``(policies, fitted)`` where ``fitted[h]`` is the fitted upstream
    pmf of hub ``h+1`` (``None`` for hub 1).
    """
    from .estimator import ArrivalSamples, fit_empirical_pmf
    from .sim import simulate_upstream_arrivals

    if episodes < 1:
        raise ValidationError("episodes must be >= 1")
    bins = bins or BinPartition.uniform(config.horizon, 60)
    cap = config.state_cap
    policies: list[ThresholdPolicy] = []
    fitted: list[ArrivalPmf | None] = []
    for h, hub in enumerate(config.hubs):
        if h == 0:
            total = hub.join_arrivals
            fitted.append(None)
        else:
            samples = simulate_upstream_arrivals(config, policies, h, episodes, seed)
            theta_pmf = fit_empirical_pmf(ArrivalSamples(samples), bins)
            fitted.append(theta_pmf)
            total = combine_arrival_pmfs(hub.join_arrivals, theta_pmf, cap)
        _, policy = solve_single_hub(total, hub.reward, config.horizon, cap)
        policies.append(policy)
    return policies, fitted
