"""Writers for report.json, metric CSVs, SVG plots and meta.json."""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

import numpy as np

from .scenarios import ScenarioResult

SCHEMA = "1"


def clean(x):
    """JSON-safe copy: numpy scalars become Python numbers, non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    return x


def report_dict(result: ScenarioResult, config: dict) -> dict:
    return clean({
        "schema": SCHEMA,
        "scenario": result.scenario,
        "config": config,
        "passed": result.passed,
        "tags": result.tags,
        "checks": [{"name": c.name, "tag": c.tag, "value": c.value, "op": c.op,
                    "threshold": c.threshold, "passed": c.passed} for c in result.checks],
        "scalars": result.scalars,
        "tables": {name: f"metrics/{name}.csv" for name in sorted(result.tables)},
    })


def write_csv(path: Path, rows: list[dict]) -> None:
    cols = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: clean(r.get(k, "")) for k in cols})


def write_plot(path: Path, plot, rows: list[dict]) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    # fixed salt and no date keep the SVG stable across runs
    with matplotlib.rc_context({"svg.hashsalt": "pharmonic-lab", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        xs = np.array([float(r[plot.x]) for r in rows])
        for y in plot.y:
            ys = np.array([float(r[y]) for r in rows])
            ok = np.isfinite(ys) & (ys > 0 if plot.logy else True)
            ax.plot(xs[ok], ys[ok], marker="o", lw=1, label=y)
        if plot.logx:
            ax.set_xscale("log")
        if plot.logy:
            ax.set_yscale("log")
        ax.set_xlabel(plot.xlabel or plot.x)
        ax.set_ylabel(plot.ylabel)
        if len(plot.y) > 1:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_outputs(out: Path, result: ScenarioResult, config: dict, meta: dict) -> Path:
    out = Path(out)
    (out / "metrics").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(exist_ok=True)
    for name, rows in result.tables.items():
        write_csv(out / "metrics" / f"{name}.csv", rows)
    for plot in result.plots:
        write_plot(out / "plots" / f"{plot.name}.svg", plot, result.tables[plot.table])
    path = out / "report.json"
    path.write_text(json.dumps(report_dict(result, config), indent=2, sort_keys=True) + "\n")
    meta = dict(meta, python=platform.python_version(), numpy=np.__version__)
    (out / "meta.json").write_text(json.dumps(clean(meta), indent=2, sort_keys=True) + "\n")
    return path
