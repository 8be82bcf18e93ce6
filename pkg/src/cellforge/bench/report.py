"""Figures rendered from the CSV outputs of a run (needs matplotlib)."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

FIG_PARAMS = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 150,
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams.update(FIG_PARAMS)
    return plt


def _save(plt, fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_errors(plt, rows, path):
    rows = [r for r in rows if r["err_pct"]]
    if not rows:
        return None
    fig, ax = plt.subplots()
    ax.loglog([int(r["dofs"]) for r in rows], [float(r["err_pct"]) for r in rows], "o-", label="hp")
    ax.set_xlabel("degrees of freedom")
    ax.set_ylabel("relative energy error [%]")
    ax.legend()
    return _save(plt, fig, path)


def plot_reactions(plt, rows, path):
    series = defaultdict(lambda: ([0.0], [0.0]))
    for r in rows:
        u, f = series[(r["cycle"], r["monitor"])]
        u.append(abs(float(r["u"])) if r["u"] != "nan" else float(r["step"]))
        f.append(abs(float(r["force"])))
    if not series:
        return None
    fig, ax = plt.subplots()
    for (cycle, monitor), (u, f) in sorted(series.items()):
        ax.plot(u, f, "o-", label=f"{monitor}, cycle {cycle}")
    ax.set_xlabel("prescribed displacement [mm]")
    ax.set_ylabel("reaction force [kN]")
    ax.legend()
    return _save(plt, fig, path)


def plot_iterations(plt, rows, path):
    counts = defaultdict(dict)
    for r in rows:
        counts[r["cycle"]][int(r["step"])] = int(r["iteration"])
    if not counts:
        return None
    fig, ax = plt.subplots()
    for cycle, per_step in sorted(counts.items()):
        steps = sorted(per_step)
        ax.plot(steps, [per_step[s] for s in steps], "s-", label=f"cycle {cycle}")
    ax.set_xlabel("load step")
    ax.set_ylabel("Newton iterations")
    ax.legend()
    return _save(plt, fig, path)


def render_plots(out_dir) -> dict[str, Path]:
    """Render PNG figures next to the CSV files in ``out_dir``."""
    out = Path(out_dir)
    plt = _pyplot()
    made = {
        "errors_plot": plot_errors(plt, _rows(out / "errors.csv"), out / "errors.png"),
        "reactions_plot": plot_reactions(plt, _rows(out / "reactions.csv"), out / "reactions.png"),
        "iterations_plot": plot_iterations(plt, _rows(out / "newton.csv"), out / "iterations.png"),
    }
    return {k: v for k, v in made.items() if v is not None}
