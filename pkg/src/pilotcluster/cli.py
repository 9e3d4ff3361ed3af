"""Command-line entry point: ``pilotcluster run|plot|validate|stability-check``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import random_structure, random_target_size
from .errors import ConfigError, PilotClusterError, ZFInfeasibleError
from .experiment import (
    ExperimentConfig,
    format_value,
    load_config,
    read_rows,
    run_experiment,
    seed_schedule,
)
from .game import CoalitionStructure, GameState, is_individually_stable
from .geometry import generate_deployment
from .plotting import plot
from .propagation import estimate_mu
from .utility import CombiningScheme
from .validator import VALIDATION_HEADER, validate

SUMMARY_HEADER = ["sweep_var", "sweep_value", "deployment", "scheme", "structure", "passed",
                  "max_gap", "lower_bound_ok"]


def _deployment(config: ExperimentConfig, value, index):
    p = config.point(value)
    return generate_deployment(int(p["L"]), config.density, config.gamma, config.d_min,
                               np.random.default_rng(seed_schedule(config.seed, index, "deployment")))


def _structure(config: ExperimentConfig, L, index) -> CoalitionStructure:
    spec = config.structure
    if spec == "random":
        rng = np.random.default_rng(seed_schedule(config.seed, index, "random"))
        return random_structure(L, random_target_size(L), rng)
    if spec == "singletons":
        return CoalitionStructure.singletons(L)
    if spec == "grand":
        return CoalitionStructure.grand(L)
    C = CoalitionStructure.parse(spec)
    if C.L != L:
        raise ConfigError(f"structure {spec} does not cover {L} cells")
    return C


def cmd_run(args) -> int:
    config = load_config(args.config, args.set)
    paths = run_experiment(config, args.output)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_plot(args) -> int:
    print(plot(args.csv, args.spec))
    return 0


def cmd_validate(args) -> int:
    config = load_config(args.config, args.set)
    out = Path(args.output or config.output)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    ok = True
    for value in config.sweep_values:
        params = config.params(value)
        for index in range(config.n_deployments):
            dep = _deployment(config, value, index)
            C = _structure(config, params.L, index)
            stats = estimate_mu(dep, config.validation_mu_samples,
                                np.random.default_rng(seed_schedule(config.seed, index, "mu-validate")))
            for s in config.schemes:
                scheme = CombiningScheme.parse(s)
                try:
                    report = validate(C, params, dep, scheme, config.tolerance,
                                      config.n_position_draws, config.n_channel_draws, stats=stats,
                                      rng=seed_schedule(config.seed, index, f"validate/{scheme.value}"))
                except ZFInfeasibleError as exc:
                    print(f"{config.sweep_var}={value} deployment={index} {scheme.value}: SKIP ({exc})")
                    summary.append([config.sweep_var, value, index, scheme.value, str(C),
                                    "infeasible", "", ""])
                    continue
                name = f"validation_{config.sweep_var}{value}_d{index}_{scheme.value}.csv"
                with open(out / name, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(VALIDATION_HEADER)
                    w.writerows(report.rows())
                ok &= report.passed
                summary.append([config.sweep_var, value, index, scheme.value, str(C),
                                str(report.passed).lower(), f"{report.max_gap:.6g}",
                                str(bool(report.lower_bound_ok.all())).lower()])
                print(f"{config.sweep_var}={value} deployment={index} {scheme.value}: "
                      f"{'PASS' if report.passed else 'FAIL'} max_gap={report.max_gap:.4f} "
                      f"lower_bound={'ok' if report.lower_bound_ok.all() else 'violated'}")
    with open(out / "validation_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(summary)
    return 0 if ok else 1


def cmd_stability_check(args) -> int:
    """Re-derive each deployment from the run config and test the formation outputs."""
    csv_path = Path(args.csv)
    config = load_config(args.config or csv_path.parent / "config.txt")
    rows = read_rows(csv_path)
    values = {format_value(v): v for v in config.sweep_values}
    stats_cache = {}
    failures = checked = skipped = infeasible = 0
    for r in rows:
        if not r["scheme"].endswith("/formation"):
            continue
        if r.get("budget_exhausted") == "true":
            skipped += 1
            continue
        value = values.get(r["sweep_value"])
        if value is None:
            raise ConfigError(f"sweep value {r['sweep_value']} is not in the run config")
        index = int(r["deployment"])
        key = (r["sweep_value"], index)
        if key not in stats_cache:
            dep = _deployment(config, value, index)
            stats_cache[key] = estimate_mu(dep, config.mu_samples,
                                           np.random.default_rng(seed_schedule(config.seed, index, "mu")))
        params = config.params(value)
        C = CoalitionStructure.parse(r["structure"])
        scheme = CombiningScheme.parse(r["scheme"].split("/")[0])
        try:
            stable, dev = is_individually_stable(C, GameState.fresh(C.L), stats_cache[key], params,
                                                 scheme)
        except ZFInfeasibleError:
            # formation never ran from this start; the run recorded it as infeasible
            infeasible += 1
            continue
        checked += 1
        if not stable:
            failures += 1
            j, S = dev
            print(f"UNSTABLE {r['sweep_var']}={r['sweep_value']} deployment={index} {r['scheme']} "
                  f"({r['init']}): cell {j} gains by joining {sorted(S) or 'a new coalition'}")
    print(f"checked {checked} structures, {failures} unstable, {skipped} skipped (budget exhausted), "
          f"{infeasible} skipped (ZF-infeasible)")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pilotcluster",
                                     description="Pilot-sharing coalition experiments for massive MIMO uplinks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", help="key=value config file")
        p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("-o", "--output", help="output directory (overrides the config)")

    p = sub.add_parser("run", help="run an experiment and write CSV tables and SVG figures")
    with_config(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plot", help="render one metric of an aggregate CSV to SVG")
    p.add_argument("csv")
    p.add_argument("spec", help="plot spec file, or inline 'metric=...;output=...'")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("validate", help="compare closed-form utilities with Monte Carlo")
    with_config(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stability-check", help="check formation outputs for individual stability")
    p.add_argument("csv", help="structures.csv written by 'run'")
    p.add_argument("--config", help="config of the run (default: config.txt next to the CSV)")
    p.set_defaults(func=cmd_stability_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PilotClusterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
