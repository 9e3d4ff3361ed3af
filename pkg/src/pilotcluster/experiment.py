"""Seeded multi-deployment experiments with CSV output.

A config fixes every system parameter except one swept variable. For each
sweep value and deployment index the runner draws a deployment, estimates the
attenuation moments, and evaluates the requested pilot-reuse schemes. Random
streams are derived from ``(seed, deployment index, purpose)`` only, so the
same deployment index sees the same randomness at every sweep value and under
any degree of parallelism.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import (
    ENUMERATION_LIMIT,
    exhaustive_optimum,
    full_reuse_utilities,
    random_structure,
    random_target_size,
    singleton_structure,
)
from .errors import ConfigError, ZFInfeasibleError
from .formation import run_formation
from .game import CoalitionStructure
from .geometry import DEFAULT_D_MIN, DEFAULT_DENSITY, DEFAULT_GAMMA, generate_deployment
from .propagation import DEFAULT_MU_SAMPLES, estimate_mu
from .utility import (
    DEFAULT_ALPHA,
    DEFAULT_S,
    DEFAULT_SNR_DB,
    CombiningScheme,
    SystemParams,
    scheduled_users,
    utility_vector,
)

log = logging.getLogger(__name__)

THREADS_ENV = "PILOTCLUSTER_THREADS"
SWEEP_VARS = ("L", "M", "K_max", "alpha", "q")
INITS = ("singletons", "random")

ROWS_HEADER = ["sweep_var", "sweep_value", "deployment", "scheme", "init", "cell",
               "se_bit_per_symbol", "coalition_size", "messages", "k_scheduled"]
AGGREGATE_HEADER = ["sweep_var", "sweep_value", "scheme", "init", "metric", "n",
                    "mean", "ci95_low", "ci95_high"]
STRUCTURES_HEADER = ["sweep_var", "sweep_value", "deployment", "scheme", "init", "structure",
                     "rounds", "converged", "budget_exhausted"]
METRICS = ("se_per_cell", "se_sum", "coalition_size", "messages_per_bs", "k_scheduled")
Z95 = 1.959963984540054


def seed_schedule(master, index, tag) -> int:
    """64-bit sub-seed from a master seed, a deployment index and a purpose tag."""
    key = f"{int(master)}\x1f{int(index)}\x1f{tag}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _number(text):
    text = text.strip()
    if text.lower() in ("inf", "infinity", "∞"):
        return math.inf
    value = float(text)
    return int(value) if value.is_integer() and "." not in text and "e" not in text.lower() else value


def _optional_int(text):
    text = text.strip()
    return None if text.lower() in ("", "none", "auto") else int(text)


def _words(text):
    return tuple(w.strip() for w in text.split(",") if w.strip())


def _numbers(text):
    return tuple(_number(w) for w in _words(text))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    sweep_var: str = "L"
    sweep_values: tuple = (16,)
    schemes: tuple = ("mrc", "zfc")
    L: int = 16
    M: int = 500
    S: int = DEFAULT_S
    alpha: float = DEFAULT_ALPHA
    snr_db: float = DEFAULT_SNR_DB
    density: float = DEFAULT_DENSITY
    gamma: float = DEFAULT_GAMMA
    d_min: float = DEFAULT_D_MIN
    K_max: int | None = None  # None schedules up to the whole pool
    q: float = math.inf
    n_deployments: int = 100
    inits: tuple = INITS
    baselines: bool = True
    exhaustive: bool = False
    enumeration_limit: int = ENUMERATION_LIMIT
    mu_samples: int = DEFAULT_MU_SAMPLES
    max_rounds: int | None = None
    output: str = "results"
    figures: bool = True
    # validate subcommand
    structure: str = "random"
    n_position_draws: int = 200
    n_channel_draws: int = 500
    tolerance: float = 0.05
    validation_mu_samples: int = 200_000

    def __post_init__(self):
        if self.sweep_var not in SWEEP_VARS:
            raise ConfigError(f"sweep_var must be one of {SWEEP_VARS}, got {self.sweep_var!r}")
        if not self.sweep_values:
            raise ConfigError("sweep_values is empty")
        for s in self.schemes:
            CombiningScheme.parse(s)
        bad = set(self.inits) - set(INITS)
        if bad:
            raise ConfigError(f"unknown initializations {sorted(bad)}")
        if self.n_deployments < 1:
            raise ConfigError("n_deployments must be positive")

    def point(self, value) -> dict:
        """Fixed parameters with the sweep variable set to ``value``."""
        p = {k: getattr(self, k) for k in ("L", "M", "K_max", "alpha", "q")}
        p[self.sweep_var] = value
        return p

    def params(self, value) -> SystemParams:
        p = self.point(value)
        return SystemParams.create(int(p["L"]), int(p["M"]), self.S, float(p["alpha"]), self.snr_db,
                                   K_max=p["K_max"])

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "seed": int, "sweep_var": str.strip, "sweep_values": _numbers, "schemes": _words,
    "L": int, "M": int, "S": int, "alpha": float, "snr_db": float, "density": float,
    "gamma": float, "d_min": float, "K_max": _optional_int, "q": _number,
    "n_deployments": int, "inits": _words, "baselines": _bool, "exhaustive": _bool,
    "enumeration_limit": int, "mu_samples": int, "max_rounds": _optional_int,
    "output": str.strip, "figures": _bool, "structure": str.strip,
    "n_position_draws": int, "n_channel_draws": int, "tolerance": float,
    "validation_mu_samples": int,
}


def parse_key_values(text) -> dict:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def config_from_mapping(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - set(_PARSERS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "seed" not in raw:
        raise ConfigError("a master seed is required")
    kwargs = {}
    for key, text in raw.items():
        try:
            kwargs[key] = _PARSERS[key](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r}") from exc
    if "sweep_values" not in kwargs:
        var = kwargs.get("sweep_var", "L")
        kwargs["sweep_values"] = (kwargs.get(var, getattr(ExperimentConfig, var)),)
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read a config file and apply ``key=value`` overrides on top."""
    try:
        raw = parse_key_values(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw.update(parse_key_values("\n".join(overrides)))
    return config_from_mapping(raw)


def format_value(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".10g")


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


@dataclass
class DeploymentResult:
    rows: list
    structures: list


def _cell_rows(prefix, scheme_name, init, se, sizes, messages, K):
    return [prefix + [scheme_name, init, j, format_value(se[j]), int(sizes[j]), int(messages[j]), int(K[j])]
            for j in range(len(se))]


def run_deployment(config: ExperimentConfig, value, index) -> DeploymentResult:
    """Every requested scheme on deployment ``index`` at sweep value ``value``."""
    params = config.params(value)
    q = config.point(value)["q"]
    L = params.L
    seed = config.seed
    dep = generate_deployment(L, config.density, config.gamma, config.d_min,
                              np.random.default_rng(seed_schedule(seed, index, "deployment")))
    stats = estimate_mu(dep, config.mu_samples, np.random.default_rng(seed_schedule(seed, index, "mu")))
    prefix = [config.sweep_var, format_value(value), index]
    rows, structures = [], []
    zeros = np.zeros(L, dtype=int)
    random_init = random_structure(L, random_target_size(L),
                                   np.random.default_rng(seed_schedule(seed, index, "init")))
    starts = {"singletons": singleton_structure(L), "random": random_init}

    def record(name, init, C, se, messages=zeros, K=None, extra=("", "", "")):
        K = scheduled_users(C, params) if K is None else K
        rows.extend(_cell_rows(prefix, name, init, se, C.sizes(), messages, K))
        structures.append(prefix + [name, init, str(C), *extra])

    for s in config.schemes:
        scheme = CombiningScheme.parse(s)
        runs = {}
        inits = list(config.inits)
        if config.baselines and "singletons" not in inits:
            inits.append("singletons")  # full reuse borrows its schedule from this run
        for init in inits:
            rng = np.random.default_rng(seed_schedule(seed, index, f"formation/{init}"))
            try:
                runs[init] = run_formation(starts[init], q, params, stats, scheme, rng,
                                           config.max_rounds)
            except ZFInfeasibleError:
                runs[init] = None
        for init in config.inits:
            res = runs[init]
            name = f"{scheme.value}/formation"
            if res is None:
                record(name, init, starts[init], np.full(L, np.nan))
                continue
            C = res.final_structure
            record(name, init, C, utility_vector(C, stats, params, scheme), res.messages,
                   extra=(res.rounds, str(res.converged).lower(), str(res.budget_exhausted).lower()))
        if not config.baselines:
            continue
        for name, C in ((f"{scheme.value}/noncooperation", starts["singletons"]),
                        (f"{scheme.value}/random", random_structure(
                            L, random_target_size(L),
                            np.random.default_rng(seed_schedule(seed, index, "random"))))):
            record(name, "none", C, utility_vector(C, stats, params, scheme))
        grand = CoalitionStructure.grand(L)
        ref = runs["singletons"]
        if ref is None:
            record(f"{scheme.value}/full_reuse", "none", grand, np.full(L, np.nan))
        else:
            K = scheduled_users(ref.final_structure, params)
            try:
                se = full_reuse_utilities(K, stats, params, scheme)
            except ZFInfeasibleError:
                se = np.full(L, np.nan)
            record(f"{scheme.value}/full_reuse", "none", grand, se, K=K)
        if config.exhaustive and L <= config.enumeration_limit:
            opt = exhaustive_optimum(L, stats, params, scheme, config.enumeration_limit)
            if opt.structure is None:
                record(f"{scheme.value}/optimum", "none", grand, np.full(L, np.nan))
            else:
                record(f"{scheme.value}/optimum", "none", opt.structure,
                       utility_vector(opt.structure, stats, params, scheme))
    return DeploymentResult(rows, structures)


def _task(args):
    return run_deployment(*args)


def run_points(config: ExperimentConfig, threads=None) -> list:
    """Results for every (sweep value, deployment), in sweep then deployment order."""
    tasks = [(config, v, i) for v in config.sweep_values for i in range(config.n_deployments)]
    threads = thread_count() if threads is None else threads
    if threads <= 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def _finite_mean_ci(values):
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    n = v.size
    if n == 0:
        return 0, math.nan, math.nan, math.nan
    mean = float(v.mean())
    half = Z95 * float(v.std(ddof=1)) / math.sqrt(n) if n > 1 else math.nan
    return n, mean, mean - half, mean + half


def per_deployment_metrics(rows) -> dict:
    """``(sweep_value, scheme, init) -> {metric: [value per deployment]}`` from row records."""
    groups = {}
    for r in rows:
        key = (r["sweep_value"], r["scheme"], r["init"])
        groups.setdefault(key, {}).setdefault(r["deployment"], []).append(r)
    out = {}
    for key, deps in groups.items():
        metrics = {m: [] for m in METRICS}
        for cells in deps.values():
            se = np.array([float(c["se_bit_per_symbol"]) for c in cells])
            metrics["se_per_cell"].append(float(se.mean()))
            metrics["se_sum"].append(float(se.sum()))
            metrics["coalition_size"].append(float(np.mean([int(c["coalition_size"]) for c in cells])))
            metrics["messages_per_bs"].append(float(np.mean([int(c["messages"]) for c in cells])))
            metrics["k_scheduled"].append(float(np.mean([int(c["k_scheduled"]) for c in cells])))
        out[key] = metrics
    return out


def aggregate(rows) -> list:
    """Mean and normal-approximation 95% CI of each metric over deployments."""
    rows = list(rows)
    if not rows:
        return []
    var = rows[0]["sweep_var"]
    out = []
    for (value, scheme, init), metrics in per_deployment_metrics(rows).items():
        for m in METRICS:
            n, mean, lo, hi = _finite_mean_ci(metrics[m])
            out.append([var, value, scheme, init, m, n, format_value(mean), format_value(lo), format_value(hi)])
    return out


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_experiment(config: ExperimentConfig, output=None, threads=None) -> dict:
    """Run the experiment and write rows, aggregates, structures, config and figures.

    Returns a mapping of output names to paths.
    """
    out = Path(output or config.output)
    out.mkdir(parents=True, exist_ok=True)
    results = run_points(config, threads)
    rows = [r for res in results for r in res.rows]
    paths = {
        "config": out / "config.txt",
        "rows": out / "rows.csv",
        "aggregate": out / "aggregate.csv",
        "structures": out / "structures.csv",
    }
    paths["config"].write_text("# optimum objective: sum of per-cell SE\n" + config.to_text())
    _write_csv(paths["rows"], ROWS_HEADER, rows)
    _write_csv(paths["structures"], STRUCTURES_HEADER, [s for res in results for s in res.structures])
    _write_csv(paths["aggregate"], AGGREGATE_HEADER, aggregate(read_rows(paths["rows"])))
    if config.figures:
        from .plotting import PlotSpec, plot

        for metric in ("se_per_cell", "coalition_size", "messages_per_bs"):
            target = out / f"{metric}.svg"
            plot(paths["aggregate"], PlotSpec(metric=metric, output=str(target)))
            paths[metric] = target
    log.info("wrote %d rows to %s", len(rows), out)
    return paths
