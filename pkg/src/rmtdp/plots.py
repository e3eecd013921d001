"""Figures written next to CLI reports (non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

MARKERS = {"noprune-obs": "s", "noprune-bel": "o", "maxexp": "^", "nofail": "v", "mdp-baseline": "x"}


def _by_method(reports):
    out: dict = {}
    for r in reports:
        out.setdefault(r.method, []).append(r)
    for rs in out.values():
        rs.sort(key=lambda r: r.agents)
    return out


def plot_search(reports, stem) -> list:
    """Nodes evaluated and run time against agent count, one line per method (log scale)."""
    stem = Path(stem)
    written = []
    groups = _by_method(reports)
    for key, ylabel, suffix, get in (
            ("nodes", "Number of nodes evaluated", "_nodes.png", lambda r: r.nodes_evaluated),
            ("time", "Run time (s)", "_runtime.png", lambda r: r.timing.get("wall_time", 0.0))):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for method, rs in groups.items():
            xs = [r.agents for r in rs]
            ys = [max(get(r), 1e-6) for r in rs]
            ax.plot(xs, ys, marker=MARKERS.get(method, "."), label=method)
        ax.set_yscale("log")
        ax.set_xlabel("Number of agents")
        ax.set_ylabel(ylabel)
        ax.set_xticks(sorted({r.agents for r in reports}))
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        path = stem.with_name(stem.name + suffix)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def plot_sweep(sweep, stem) -> list:
    """Value of the allocation found on each perturbed model, measured on the original model."""
    stem = Path(stem)
    pts = sorted(sweep.points, key=lambda p: p.percent)
    xs = [p.percent for p in pts]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(xs, [p.value_original for p in pts], marker="o", label="in original model")
    ax.plot(xs, [p.value_perturbed for p in pts], marker="^", linestyle="--", label="in perturbed model")
    ax.axhline(sweep.baseline.best_value, color="0.6", linewidth=0.8, label="baseline best")
    lo, hi = sweep.stability_range
    ax.axvspan(lo, hi, color="0.9", zorder=0)
    ax.set_xlabel(f"Error in {sweep.parameter} (%)")
    ax.set_ylabel("Expected value")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    path = stem.with_name(stem.name + "_sweep.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
