"""``platoon`` command line: solve, simulate, ingest-counts, verify.

Exit codes: 0 success, 1 verification failure, 2 malformed input,
3 missing policy artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, default_out_dir, load_config, load_hourly_counts,
                     rates_from_counts)
from .errors import ValidationError
from .experiments import (POLICY_KINDS, MissingPolicyArtifact, file_sha256, load_policies,
                          load_spec, run_sweep, save_policies, solve_policies,
                          state_space_sizes, write_outputs)

log = logging.getLogger("hubplatoon")

EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_ARTIFACT = 3


def parse_seeds(text: str | None) -> list[int]:
    """``"1,2,5-7"`` -> ``[1, 2, 5, 6, 7]``; empty means the default seed list."""
    if not text:
        return []
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ValidationError(f"bad seed list entry {part!r}") from None
    return seeds


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_solve(args) -> int:
    config = load_config(args.config)
    if args.policy not in ("single-hub", "two-hub"):
        raise ValidationError(f"{args.policy} decisions are computed online; "
                              "only single-hub and two-hub policies can be solved offline")
    out = Path(args.out or default_out_dir())
    t0 = time.perf_counter()
    policies = solve_policies(config, args.policy, args.fit_episodes, args.seed)
    runtime = time.perf_counter() - t0
    paths = save_policies(policies, args.policy, out)
    report = {
        "policy": args.policy,
        "config": str(args.config),
        "config_sha256": file_sha256(args.config),
        "fit_episodes": args.fit_episodes,
        "fit_seed": args.seed,
        "runtime_seconds": runtime,
        "state_space": state_space_sizes(config, args.policy),
        "artifacts": {p.name: file_sha256(p) for p in paths},
    }
    _write_json(out / f"{args.policy}_solve_report.json", report)
    for p in paths:
        print(p)
    return 0


def cmd_simulate(args) -> int:
    spec = load_spec(args.spec)
    if args.seeds is not None:
        spec.seeds = tuple(parse_seeds(args.seeds))
    if args.episodes is not None:
        spec.episodes = args.episodes
    if args.horizon_L is not None:
        spec.horizon_L = args.horizon_L
    if args.gnuplot:
        spec.gnuplot = True
    spec.__post_init__()
    config_path = Path(args.config) if args.config else spec.config_path
    config = load_config(config_path)
    out = Path(args.out or spec.out_dir or default_out_dir())

    policy_sets, artifacts = {}, {}
    if spec.policy_dir is not None:
        for kind in spec.policies:
            if kind in ("single-hub", "two-hub"):
                policy_sets[kind] = load_policies(kind, config.num_hubs, spec.policy_dir)
                for h in range(1, config.num_hubs + 1):
                    p = spec.policy_dir / f"{kind}_hub{h}.csv"
                    artifacts[p.name] = file_sha256(p)
            else:
                policy_sets[kind] = solve_policies(config, kind, horizon_L=spec.horizon_L)
    result = run_sweep(config, spec, policy_sets or None, workers=args.workers)
    paths = write_outputs(result.rows, out, spec.gnuplot)
    manifest = {
        "scenario": spec.scenario,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "spec": str(args.spec),
        "spec_sha256": file_sha256(args.spec),
        "config": str(config_path),
        "config_sha256": file_sha256(config_path),
        "policies": list(spec.policies),
        "policy_artifacts": artifacts,
        "seeds": spec.seed_list,
        "episodes": len(spec.seed_list),
        "fit_episodes": spec.fit_episodes,
        "fit_seed": spec.fit_seed,
        "horizon_L": spec.horizon_L,
        "sweep": {"axis": spec.sweep_axis, "values": list(spec.sweep_values)},
        "per_truck_travel": spec.per_truck_travel,
        "outputs": {p.name: file_sha256(p) for p in paths},
    }
    _write_json(out / "manifest.json", manifest)
    for p in paths:
        print(p)
    return 0


def cmd_ingest_counts(args) -> int:
    counts = load_hourly_counts(args.csv)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hub", "t", "rate"])
        for hub, hourly in counts.items():
            for t, lam in enumerate(rates_from_counts(hourly, args.horizon, args.step_minutes)):
                w.writerow([hub, t, repr(float(lam))])
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    ok = run_all(instances=args.instances, seed=args.seed)
    return 0 if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platoon", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute threshold policies and write them as CSV")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--policy", default="single-hub", choices=POLICY_KINDS)
    p.add_argument("--out", type=Path, help="output directory (default $PLATOON_OUT_DIR or ./out)")
    p.add_argument("--fit-episodes", type=int, default=50,
                   help="simulated episodes used to fit upstream arrivals")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="run an experiment spec and write result CSVs")
    p.add_argument("--spec", required=True, type=Path)
    p.add_argument("--config", type=Path, help="override the spec's corridor config")
    p.add_argument("--out", type=Path)
    p.add_argument("--seeds", help="e.g. 0-49 or 1,2,3; empty means 0..episodes-1")
    p.add_argument("--episodes", type=int)
    p.add_argument("--horizon-L", dest="horizon_L", type=int)
    p.add_argument("--gnuplot", action="store_true", help="also write gnuplot data blocks")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest-counts", help="hourly counts CSV -> per-step arrival rates")
    p.add_argument("csv", type=Path)
    p.add_argument("--horizon", type=int, default=1440)
    p.add_argument("--step-minutes", type=float, default=1.0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_ingest_counts)

    p = sub.add_parser("verify", help="run the brute-force oracle suites")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MissingPolicyArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (ConfigError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
