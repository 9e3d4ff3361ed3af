"""Line charts with confidence bands from aggregated experiment CSVs.

Output SVGs are byte-stable: the element-id salt is fixed and no date is
embedded, so rendering the same CSV twice gives identical files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402

from .errors import ConfigError, MissingDataError  # noqa: E402

REQUIRED = ("sweep_var", "sweep_value", "scheme", "init", "metric", "mean", "ci95_low", "ci95_high")

UNITS = {
    "se_per_cell": "SE per cell [bit/symbol]",
    "se_sum": "sum SE [bit/symbol]",
    "coalition_size": "coalition size [count]",
    "messages_per_bs": "messages per BS [count]",
    "k_scheduled": "scheduled users per cell [count]",
}
AXES = {
    "L": "number of cells L [count]",
    "M": "BS antennas M [count]",
    "K_max": "max scheduled users K_max [count]",
    "alpha": "pilot fraction α",
    "q": "message budget q [count]",
}
STYLE = {
    "svg.hashsalt": "pilotcluster",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 7,
}


@dataclass(frozen=True)
class PlotSpec:
    metric: str = "se_per_cell"
    output: str = "figure.svg"
    schemes: tuple = ()  # empty means every series in the file
    title: str = ""
    width: float = 5.0
    height: float = 3.5

    @classmethod
    def parse(cls, text) -> "PlotSpec":
        """``key=value`` pairs separated by newlines or semicolons."""
        kwargs = {}
        for item in text.replace(";", "\n").splitlines():
            item = item.strip()
            if not item or item.startswith("#"):
                continue
            if "=" not in item:
                raise ConfigError(f"plot spec: expected key=value, got {item!r}")
            key, value = (s.strip() for s in item.split("=", 1))
            if key == "schemes":
                kwargs[key] = tuple(s.strip() for s in value.split(",") if s.strip())
            elif key in ("width", "height"):
                kwargs[key] = float(value)
            elif key in ("metric", "output", "title"):
                kwargs[key] = value
            else:
                raise ConfigError(f"plot spec: unknown key {key!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, spec) -> "PlotSpec":
        """A spec file path or an inline spec string."""
        path = Path(spec)
        return cls.parse(path.read_text() if path.is_file() else spec)


def _x_value(text):
    return math.inf if text.strip().lower() == "inf" else float(text)


def _series(rows, spec: PlotSpec):
    series = {}
    for r in rows:
        if r["metric"] != spec.metric:
            continue
        label = r["scheme"] if r["init"] == "none" else f"{r['scheme']} ({r['init']})"
        if spec.schemes and r["scheme"] not in spec.schemes:
            continue
        series.setdefault(label, []).append(
            (_x_value(r["sweep_value"]), float(r["mean"]), float(r["ci95_low"]), float(r["ci95_high"])))
    return {k: sorted(v) for k, v in series.items()}


def plot(csv_path, spec) -> Path:
    """Render one metric of an aggregate CSV against the sweep variable to an SVG."""
    spec = spec if isinstance(spec, PlotSpec) else PlotSpec.load(spec)
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED if c not in (reader.fieldnames or ())]
        if missing:
            raise MissingDataError(f"{csv_path}: missing columns {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise MissingDataError(f"{csv_path}: no data rows")
    series = _series(rows, spec)
    if not series:
        raise MissingDataError(f"{csv_path}: no rows for metric {spec.metric!r}")
    sweep_var = rows[0]["sweep_var"]

    xs = sorted({x for pts in series.values() for x, *_ in pts})
    finite = [x for x in xs if math.isfinite(x)]
    # an unbounded budget is drawn one step past the largest finite value
    inf_at = (finite[-1] + (finite[-1] - finite[0]) / max(len(finite) - 1, 1) if len(finite) > 1
              else (finite[0] + 1 if finite else 0.0))

    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(spec.width, spec.height))
        ax = fig.add_subplot()
        for label, pts in series.items():
            x = [inf_at if math.isinf(p[0]) else p[0] for p in pts]
            mean = [p[1] for p in pts]
            lo = [p[2] if math.isfinite(p[2]) else p[1] for p in pts]
            hi = [p[3] if math.isfinite(p[3]) else p[1] for p in pts]
            (line,) = ax.plot(x, mean, marker="o", markersize=3, label=label)
            ax.fill_between(x, lo, hi, color=line.get_color(), alpha=0.2, linewidth=0)
        if any(math.isinf(x) for x in xs):
            ticks = finite + [inf_at]
            ax.set_xticks(ticks, [f"{t:g}" for t in finite] + ["∞"])
        ax.set_xlabel(AXES.get(sweep_var, sweep_var))
        ax.set_ylabel(UNITS.get(spec.metric, spec.metric))
        if spec.title:
            ax.set_title(spec.title)
        ax.legend(loc="best")
        fig.tight_layout()
        out = Path(spec.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, format="svg", metadata={"Date": None})
    return out
