"""Policy solving, sweeps and CSV output shared by the CLI and the acceptance tests."""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import ValidationError
from .horizon import DEFAULT_L
from .model import CorridorConfig
from .sim import CentralizedBinding, DistributedBinding, ExperimentResult, run_experiment
from .single_hub import ThresholdPolicy, run_algorithm_1
from .two_hub import WThresholdPolicy, run_algorithm_2

log = logging.getLogger(__name__)

POLICY_KINDS = ("single-hub", "two-hub", "distributed", "centralized")
SWEEP_AXES = ("none", "exit_likelihood", "travel_std")
DEFAULT_EPISODES = 50


class MissingPolicyArtifact(FileNotFoundError):
    pass


def solve_policies(config: CorridorConfig, kind: str, fit_episodes: int = DEFAULT_EPISODES,
                   seed: int = 0, horizon_L: int = DEFAULT_L) -> list:
    """One binding per hub for the requested policy kind."""
    if kind == "single-hub":
        return run_algorithm_1(config, fit_episodes, seed=seed)[0]
    if kind == "two-hub":
        return run_algorithm_2(config, fit_episodes, seed=seed)[0]
    if kind == "distributed":
        return [DistributedBinding(horizon_L)] * config.num_hubs
    if kind == "centralized":
        return [CentralizedBinding(horizon_L)] * config.num_hubs
    raise ValidationError(f"unknown policy kind {kind!r}; choose from {', '.join(POLICY_KINDS)}")


def artifact_name(kind: str, hub: int) -> str:
    return f"{kind}_hub{hub}.csv"


def save_policies(policies: Sequence, kind: str, out_dir) -> list[Path]:
    """Write one threshold CSV per hub; returns the paths in hub order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for h, p in enumerate(policies, start=1):
        if not isinstance(p, (ThresholdPolicy, WThresholdPolicy)):
            raise ValidationError(f"{kind} policies have no threshold artifact")
        path = out_dir / artifact_name(kind, h)
        p.to_csv(path)
        paths.append(path)
    return paths


def load_policies(kind: str, num_hubs: int, policy_dir) -> list:
    """Read pre-solved threshold CSVs written by :func:`save_policies`."""
    policies = []
    for h in range(1, num_hubs + 1):
        path = Path(policy_dir) / artifact_name(kind, h)
        if not path.exists():
            raise MissingPolicyArtifact(f"missing policy artifact {path}")
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), [])
        cls = WThresholdPolicy if "w" in header else ThresholdPolicy
        policies.append(cls.from_csv(path))
    return policies


def state_space_sizes(config: CorridorConfig, kind: str) -> dict:
    T, cap, W = config.horizon, config.state_cap, config.w_max
    per_hub = []
    for h in range(config.num_hubs):
        if kind == "two-hub" and h > 0:
            per_hub.append((T + 1) * (cap + 1) * (W + 1))
        else:
            per_hub.append((T + 1) * (cap + 1))
    return {"per_hub": per_hub, "total": int(sum(per_hub))}


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class ExperimentSpec:
    """What to simulate; loaded from a YAML spec file."""

    scenario: str
    config_path: Path
    policies: tuple[str, ...] = POLICY_KINDS
    episodes: int = DEFAULT_EPISODES
    seeds: tuple[int, ...] = ()
    fit_episodes: int = DEFAULT_EPISODES
    fit_seed: int = 0
    horizon_L: int = DEFAULT_L
    sweep_axis: str = "none"
    sweep_values: tuple[float, ...] = ()
    policy_dir: Path | None = None
    out_dir: Path | None = None
    per_truck_travel: bool = False
    gnuplot: bool = False

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ValidationError(f"sweep axis must be one of {SWEEP_AXES}")
        for kind in self.policies:
            if kind not in POLICY_KINDS:
                raise ValidationError(f"unknown policy kind {kind!r}")
        if self.sweep_axis == "exit_likelihood" and any(not 0 <= v <= 1 for v in self.sweep_values):
            raise ValidationError("exit likelihoods must lie in [0, 1]")
        if self.sweep_axis == "travel_std" and any(v < 0 for v in self.sweep_values):
            raise ValidationError("travel-time standard deviations must be >= 0")
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ValidationError(f"sweep over {self.sweep_axis} needs values")
        if self.episodes < 1 or self.fit_episodes < 1 or self.horizon_L < 1:
            raise ValidationError("episodes, fit_episodes and horizon_L must be >= 1")

    @property
    def seed_list(self) -> list[int]:
        # an empty seed list means the default number of seeded runs
        return list(self.seeds) if self.seeds else list(range(self.episodes))


_SPEC_KEYS = {"scenario", "config", "policies", "episodes", "seeds", "fit_episodes",
              "fit_seed", "horizon_L", "sweep", "policy_dir", "out", "per_truck_travel",
              "gnuplot"}


def load_spec(path) -> ExperimentSpec:
    from .config import ConfigError, _Reader

    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(path, None, f"cannot read spec: {exc.strerror}") from None
    rd = _Reader(path, text)
    raw = rd.mapping(rd.data, (), _SPEC_KEYS)
    if "config" not in raw:
        rd.fail((), "missing required key 'config'")
    sweep = rd.mapping(raw.get("sweep", {}) or {}, ("sweep",), {"axis", "values"})
    seeds = raw.get("seeds") or []
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        rd.fail(("seeds",), "seeds must be a list of integers")
    policies = raw.get("policies", list(POLICY_KINDS))
    if not isinstance(policies, list):
        rd.fail(("policies",), "policies must be a list")

    def rel(p):
        return None if p is None else (path.parent / str(p))

    kwargs = dict(
        scenario=str(raw.get("scenario", path.stem)),
        config_path=rel(raw["config"]),
        policies=tuple(policies),
        episodes=raw.get("episodes", len(seeds) or DEFAULT_EPISODES),
        seeds=tuple(seeds),
        fit_episodes=raw.get("fit_episodes", DEFAULT_EPISODES),
        fit_seed=raw.get("fit_seed", 0),
        horizon_L=raw.get("horizon_L", DEFAULT_L),
        sweep_axis=sweep.get("axis", "none"),
        sweep_values=tuple(float(v) for v in sweep.get("values", []) or []),
        policy_dir=rel(raw.get("policy_dir")),
        out_dir=rel(raw.get("out")),
        per_truck_travel=bool(raw.get("per_truck_travel", False)),
        gnuplot=bool(raw.get("gnuplot", False)),
    )
    try:
        return ExperimentSpec(**kwargs)
    except (ValidationError, TypeError) as exc:
        key = {"sweep axis": "sweep", "exit": "sweep", "travel": "sweep",
               "policy kind": "policies"}
        anchor = next((v for k, v in key.items() if k in str(exc)), "")
        rd.fail((anchor,) if anchor else (), str(exc))


@dataclass
class SweepRow:
    policy: str
    axis: str
    value: float
    result: ExperimentResult


@dataclass
class SweepOutput:
    rows: list[SweepRow] = field(default_factory=list)
    solve_seconds: float = 0.0


def run_sweep(config: CorridorConfig, spec: ExperimentSpec, policy_sets: dict | None = None,
              workers: int = 1) -> SweepOutput:
    """Simulate every policy kind at every sweep value.

    Policies are re-solved for each exit likelihood (the solvers depend on it)
    and solved once for a travel-time sweep, since the solvers assume free-flow
    travel. ``policy_sets`` supplies pre-solved bindings per kind.
    """
    out = SweepOutput()
    values = spec.sweep_values if spec.sweep_axis != "none" else (float("nan"),)
    cache: dict = dict(policy_sets or {})
    for value in values:
        cfg, std = config, 0.0
        if spec.sweep_axis == "exit_likelihood":
            cfg = config.with_exit_likelihood(value)
        elif spec.sweep_axis == "travel_std":
            std = value
        for kind in spec.policies:
            key = kind if spec.sweep_axis != "exit_likelihood" or policy_sets else (kind, value)
            if key not in cache:
                t0 = time.perf_counter()
                cache[key] = solve_policies(cfg, kind, spec.fit_episodes, spec.fit_seed,
                                            spec.horizon_L)
                out.solve_seconds += time.perf_counter() - t0
            res = run_experiment(cfg, cache[key], spec.episodes, spec.seed_list,
                                 travel_std_steps=std, per_truck_travel=spec.per_truck_travel,
                                 label=kind, workers=workers)
            log.info("%s %s=%s: mean daily reward %.2f (se %.2f)", kind, spec.sweep_axis, value,
                     res.mean_daily_reward, res.std_error)
            out.rows.append(SweepRow(kind, spec.sweep_axis, value, res))
    return out


def _fmt(v: float) -> str:
    if isinstance(v, float) and np.isnan(v):
        return ""
    return repr(float(v))


REWARDS_BY_HOUR_COLUMNS = ["policy", "sweep_axis", "sweep_value", "hub", "hour",
                           "mean_reward", "std_reward", "episodes"]
RELEASE_SIZES_COLUMNS = ["policy", "sweep_axis", "sweep_value", "hub", "hour",
                         "mean_release_size", "std_release_size", "releases"]
SWEEP_EXIT_COLUMNS = ["policy", "exit_likelihood", "mean_daily_reward", "std_error", "episodes"]
SWEEP_TRAVEL_COLUMNS = ["policy", "travel_std_minutes", "mean_daily_reward", "std_error",
                        "episodes"]


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_rewards_by_hour(rows: Sequence[SweepRow], path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(REWARDS_BY_HOUR_COLUMNS)
        for row in rows:
            hourly = row.result.hourly_reward
            mean = hourly.mean(axis=0)
            std = hourly.std(axis=0, ddof=1) if hourly.shape[0] > 1 else np.zeros_like(mean)
            for h in range(mean.shape[0]):
                for hr in range(mean.shape[1]):
                    w.writerow([row.policy, row.axis, _fmt(row.value), h + 1, hr,
                                _fmt(mean[h, hr]), _fmt(std[h, hr]), row.result.episodes])


def write_release_sizes(rows: Sequence[SweepRow], path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(RELEASE_SIZES_COLUMNS)
        for row in rows:
            mean, std = row.result.release_size_stats()
            cnt = row.result.release_count
            for h in range(mean.shape[0]):
                for hr in range(mean.shape[1]):
                    w.writerow([row.policy, row.axis, _fmt(row.value), h + 1, hr,
                                _fmt(mean[h, hr]), _fmt(std[h, hr]), int(cnt[h, hr])])


def write_sweep(rows: Sequence[SweepRow], path, axis: str, step_minutes: float = 1.0) -> None:
    """Corridor daily reward per (policy, sweep value); empty table for other axes."""
    cols = SWEEP_EXIT_COLUMNS if axis == "exit_likelihood" else SWEEP_TRAVEL_COLUMNS
    fh, w = _writer(path)
    with fh:
        w.writerow(cols)
        for row in rows:
            if row.axis != axis:
                continue
            value = row.value * step_minutes if axis == "travel_std" else row.value
            w.writerow([row.policy, _fmt(value), _fmt(row.result.mean_daily_reward),
                        _fmt(row.result.std_error), row.result.episodes])


def write_gnuplot(rows: Sequence[SweepRow], path) -> None:
    """Hourly corridor reward as gnuplot data blocks, one indexed block per policy/value."""
    with open(path, "w") as fh:
        for row in rows:
            fh.write(f"# {row.policy} {row.axis}={_fmt(row.value)}\n# hour mean_reward\n")
            corridor = row.result.hourly_reward.sum(axis=1).mean(axis=0)
            for hr, v in enumerate(corridor):
                fh.write(f"{hr} {_fmt(v)}\n")
            fh.write("\n\n")


OUTPUT_FILES = ("rewards_by_hour.csv", "release_sizes.csv", "sweep_exit_likelihood.csv",
                "sweep_travel_std.csv")


def write_outputs(rows: Sequence[SweepRow], out_dir, gnuplot: bool = False) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / name for name in OUTPUT_FILES]
    write_rewards_by_hour(rows, paths[0])
    write_release_sizes(rows, paths[1])
    write_sweep(rows, paths[2], "exit_likelihood")
    write_sweep(rows, paths[3], "travel_std")
    if gnuplot:
        paths.append(out_dir / "rewards_by_hour.dat")
        write_gnuplot(rows, paths[-1])
    return paths


def spec_to_yaml(spec: ExperimentSpec) -> str:
    doc = {"scenario": spec.scenario, "policies": list(spec.policies),
           "episodes": spec.episodes, "seeds": spec.seed_list,
           "fit_episodes": spec.fit_episodes, "fit_seed": spec.fit_seed,
           "horizon_L": spec.horizon_L,
           "sweep": {"axis": spec.sweep_axis, "values": list(spec.sweep_values)},
           "per_truck_travel": spec.per_truck_travel}
    return yaml.safe_dump(doc, sort_keys=True)

