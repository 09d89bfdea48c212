"""Corridor configuration files and hourly truck-count ingestion.

Configs are YAML. Every error raised while reading one names the file and the
line of the offending key, so a typo in a long sweep file is easy to find.

Schema (all keys optional unless marked)::

    name: sweden
    horizon: 1440                 # T, steps
    step_minutes: 1
    state_cap: 60
    w_max: 240
    defaults:                     # apply to every hub unless overridden there
      exit_likelihood: 0.5
      waiting_cost_per_truck_step: 3.33
      fuel_saving_fraction: 0.10
      fuel_cost_per_km: 5.0
      speed_kmh: 80
    counts_csv: counts.csv        # hub,hour,count; relative to the config file
    hubs:                         # required, corridor order
      - name: A
        distance_from_prev_km: 131      # or travel_time_steps_from_prev
        distance_to_next_km: 131        # or platoon_benefit_per_follower
        arrival_rate: 0.5               # or arrival_rates: [...], else counts_csv
        exit_likelihood: 0.5
        waiting_cost_per_truck_step: 3.33
"""

from __future__ import annotations

import csv
import os
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ValidationError
from .model import (DEFAULT_STATE_CAP, DEFAULT_W_MAX, ArrivalPmf, CorridorConfig,
                    HubParams, RewardParams, benefit_from_fuel)

HOURS_PER_DAY = 24

_TOP_KEYS = {"name", "horizon", "step_minutes", "state_cap", "w_max", "defaults",
             "counts_csv", "hubs"}
_HUB_KEYS = {"name", "distance_from_prev_km", "travel_time_steps_from_prev",
             "distance_to_next_km", "platoon_benefit_per_follower", "arrival_rate",
             "arrival_rates", "exit_likelihood", "waiting_cost_per_truck_step",
             "fuel_saving_fraction", "fuel_cost_per_km", "speed_kmh"}
_DEFAULT_KEYS = {"exit_likelihood", "waiting_cost_per_truck_step", "fuel_saving_fraction",
                 "fuel_cost_per_km", "speed_kmh"}


class ConfigError(ValidationError):
    """Malformed configuration, anchored at ``path:line``."""

    def __init__(self, path, line, msg):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line else self.path
        super().__init__(f"{where}: {msg}")


def _marks(node, prefix=(), out=None):
    """Map key paths to 1-based source lines."""
    out = {} if out is None else out
    out.setdefault(prefix, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[prefix + (k.value,)] = k.start_mark.line + 1
            _marks(v, prefix + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[prefix + (i,)] = v.start_mark.line + 1
            _marks(v, prefix + (i,), out)
    return out


class _Reader:
    def __init__(self, path: Path, text: str):
        self.path = path
        try:
            node = yaml.compose(text)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(path, mark.line + 1 if mark else None,
                              f"YAML syntax error: {getattr(exc, 'problem', exc)}") from None
        self.lines = _marks(node) if node is not None else {}

    def fail(self, key_path, msg):
        key_path = tuple(key_path)
        while key_path and key_path not in self.lines:
            key_path = key_path[:-1]
        raise ConfigError(self.path, self.lines.get(key_path), msg)

    def mapping(self, value, key_path, allowed):
        if not isinstance(value, dict):
            self.fail(key_path, f"expected a mapping at {'.'.join(map(str, key_path)) or 'top level'}")
        for k in value:
            if k not in allowed:
                self.fail(tuple(key_path) + (k,), f"unknown key {k!r}")
        return value

    def number(self, value, key_path, lo=None, hi=None, integer=False):
        ok = isinstance(value, int) if integer else isinstance(value, (int, float))
        if isinstance(value, bool) or not ok:
            kind = "an integer" if integer else "a number"
            self.fail(key_path, f"{key_path[-1]} must be {kind}, got {value!r}")
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            self.fail(key_path, f"{key_path[-1]}={value} outside [{lo}, {hi if hi is not None else 'inf'}]")
        return value


def load_hourly_counts(path) -> dict[int, np.ndarray]:
    """Read ``hub,hour,count`` rows into one 24-vector per hub.

    Raises :class:`ValidationError` listing every missing (hub, hour).
    """
    path = Path(path)
    counts: dict[int, dict[int, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"hub", "hour", "count"}:
            raise ValidationError(f"{path}: expected columns hub,hour,count, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                hub, hour, count = int(row["hub"]), int(row["hour"]), float(row["count"])
            except (TypeError, ValueError):
                raise ValidationError(f"{path}:{lineno}: unparsable row {row}") from None
            if hub < 1 or not 0 <= hour < HOURS_PER_DAY or not np.isfinite(count) or count < 0:
                raise ValidationError(f"{path}:{lineno}: need hub >= 1, hour in 0..23, count >= 0")
            if hour in counts.setdefault(hub, {}):
                raise ValidationError(f"{path}:{lineno}: duplicate hub {hub} hour {hour}")
            counts[hub][hour] = count
    if not counts:
        raise ValidationError(f"{path}: no rows")
    gaps = [f"hub {h} hour {hr}" for h in sorted(counts) for hr in range(HOURS_PER_DAY)
            if hr not in counts[h]]
    if gaps:
        raise ValidationError(f"{path}: missing hours: {', '.join(gaps)}")
    return {h: np.array([counts[h][hr] for hr in range(HOURS_PER_DAY)]) for h in sorted(counts)}


def rates_from_counts(hourly: np.ndarray, horizon: int, step_minutes: float = 1.0) -> np.ndarray:
    """Per-step Poisson means for ``t = 0..horizon``, constant within each hour."""
    hourly = np.asarray(hourly, dtype=float)
    steps_per_hour = 60.0 / step_minutes
    t = np.arange(horizon + 1)
    hour = np.minimum((t // steps_per_hour).astype(int), hourly.size - 1)
    return hourly[hour] / steps_per_hour


def load_config(path, exit_likelihood: float | None = None) -> CorridorConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(path, None, f"cannot read config: {exc.strerror}") from None
    return parse_config(text, path, exit_likelihood)


def parse_config(text: str, path="<config>", exit_likelihood: float | None = None) -> CorridorConfig:
    path = Path(path)
    rd = _Reader(path, text)
    top = rd.mapping(rd.data, (), _TOP_KEYS)
    if "hubs" not in top:
        rd.fail((), "missing required key 'hubs'")
    horizon = rd.number(top.get("horizon", 1440), ("horizon",), 1, integer=True)
    step_minutes = rd.number(top.get("step_minutes", 1), ("step_minutes",), 1e-9)
    cap = rd.number(top.get("state_cap", DEFAULT_STATE_CAP), ("state_cap",), 1, integer=True)
    w_max = rd.number(top.get("w_max", DEFAULT_W_MAX), ("w_max",), 1, integer=True)
    defaults = rd.mapping(top.get("defaults", {}), ("defaults",), _DEFAULT_KEYS)

    counts = None
    if "counts_csv" in top:
        csv_path = path.parent / str(top["counts_csv"])
        try:
            counts = load_hourly_counts(csv_path)
        except (OSError, ValidationError) as exc:
            rd.fail(("counts_csv",), str(exc))

    hubs_raw = top["hubs"]
    if not isinstance(hubs_raw, list) or not hubs_raw:
        rd.fail(("hubs",), "hubs must be a non-empty list")
    hubs = []
    for i, raw in enumerate(hubs_raw):
        kp = ("hubs", i)
        raw = rd.mapping(raw, kp, _HUB_KEYS)

        def get(key, default=None, _raw=raw):
            return _raw.get(key, defaults.get(key, default))

        def key_path(key, _raw=raw, _kp=kp):
            return _kp + (key,) if key in _raw else ("defaults", key)

        speed = rd.number(get("speed_kmh", 80.0), key_path("speed_kmh"), 1e-9)
        if "travel_time_steps_from_prev" in raw:
            tau = rd.number(raw["travel_time_steps_from_prev"],
                            kp + ("travel_time_steps_from_prev",), 1, integer=True)
        elif "distance_from_prev_km" in raw:
            km = rd.number(raw["distance_from_prev_km"], kp + ("distance_from_prev_km",), 0)
            minutes = km / speed * 60.0
            tau = max(1, int(minutes // step_minutes))
        else:
            if i > 0:
                rd.fail(kp, f"hub {i + 1} needs distance_from_prev_km or travel_time_steps_from_prev")
            tau = 1

        if "platoon_benefit_per_follower" in raw:
            b = rd.number(raw["platoon_benefit_per_follower"],
                          kp + ("platoon_benefit_per_follower",), 0)
        elif "distance_to_next_km" in raw:
            km = rd.number(raw["distance_to_next_km"], kp + ("distance_to_next_km",), 0)
            frac = rd.number(get("fuel_saving_fraction", 0.10), key_path("fuel_saving_fraction"), 0, 1)
            cost = rd.number(get("fuel_cost_per_km", 5.0), key_path("fuel_cost_per_km"), 0)
            b = benefit_from_fuel(frac, cost, km)
        else:
            rd.fail(kp, "hub needs distance_to_next_km or platoon_benefit_per_follower")
        c = rd.number(get("waiting_cost_per_truck_step", 3.33),
                      key_path("waiting_cost_per_truck_step"), 0)
        l = rd.number(get("exit_likelihood", 0.0), key_path("exit_likelihood"), 0, 1)
        if exit_likelihood is not None:
            l = exit_likelihood

        if "arrival_rate" in raw:
            lam = rd.number(raw["arrival_rate"], kp + ("arrival_rate",), 0)
            rates = np.full(horizon + 1, float(lam))
        elif "arrival_rates" in raw:
            vals = raw["arrival_rates"]
            if not isinstance(vals, list) or len(vals) != horizon + 1:
                rd.fail(kp + ("arrival_rates",), f"arrival_rates needs {horizon + 1} entries")
            rates = np.array([rd.number(v, kp + ("arrival_rates", j), 0) for j, v in enumerate(vals)],
                             dtype=float)
        elif counts is not None:
            if i + 1 not in counts:
                rd.fail(("counts_csv",), f"counts file has no rows for hub {i + 1}")
            rates = rates_from_counts(counts[i + 1], horizon, step_minutes)
        else:
            rd.fail(kp, "hub needs arrival_rate, arrival_rates or a top-level counts_csv")
        try:
            hubs.append(HubParams(i + 1, int(tau), float(l), RewardParams(float(b), float(c)),
                                  ArrivalPmf.poisson(rates, cap), rates, str(raw.get("name", ""))))
        except ValidationError as exc:
            rd.fail(kp, str(exc))
    try:
        return CorridorConfig(horizon, tuple(hubs), cap, w_max, str(top.get("name", path.stem)))
    except ValidationError as exc:
        rd.fail((), str(exc))


def data_path(name: str) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(str(resources.files("hubplatoon") / "data" / name))


def sweden_config(exit_likelihood: float | None = None) -> CorridorConfig:
    """The shipped 3-hub northern-Sweden corridor with the digitized count profile."""
    return load_config(data_path("sweden.yaml"), exit_likelihood)


def default_out_dir() -> Path:
    return Path(os.environ.get("PLATOON_OUT_DIR", "out"))
