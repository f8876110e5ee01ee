"""PNG figures rendered next to the experiment CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from envyaudit.harness.experiments import ExperimentResult, parse_grid_point  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _curves(summary, series_key: str, x_key: str, y_key: str):
    """Group summary rows into one (xs, ys) curve per value of ``series_key``."""
    curves = {}
    for row in summary:
        gp = parse_grid_point(row["grid_point"])
        curves.setdefault(gp[series_key], []).append((gp[x_key], row[y_key]))
    return {k: sorted(v) for k, v in curves.items()}


def plot_sweep(result: ExperimentResult, series_key: str, x_key: str) -> list[Path]:
    """Duration and cost against ``x_key``, one line per ``series_key`` value."""
    out = []
    for metric, label in (("mean_duration", "duration"), ("mean_cost", "cost of exploration")):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, pts in _curves(result.summary, series_key, x_key, metric).items():
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", label=f"{series_key} {name}")
        if metric == "mean_cost":
            ax.axhline(0.0, color="grey", lw=0.8)
        ax.set_xlabel(x_key)
        ax.set_ylabel(label)
        ax.legend(fontsize=7)
        path = Path(result.config.output_dir) / f"{result.config.name}_{label.split()[0]}.png"
        out.append(_save(fig, path))
    return out


def plot_mispecification(result: ExperimentResult) -> list[Path]:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ranks = [r["rank"] for r in result.summary]
    ax.plot(ranks, [r["average_envy"] for r in result.summary], marker="o", label="average envy")
    ax.plot(ranks, [r["prop_envious"] for r in result.summary], marker="s", label="prop. envious")
    ax.set_xlabel("model rank")
    ax.legend(fontsize=7)
    return [_save(fig, Path(result.config.output_dir) / f"{result.config.name}_envy.png")]


def plot_policies(result: ExperimentResult) -> list[Path]:
    """Bar charts of total utility and average envy per policy (first trial)."""
    rows = [r for r in result.rows if r["trial"] == 0]
    names = [r["policy"] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(7, 3.2))
    axes[0].bar(names, [r["total_utility"] for r in rows])
    axes[0].set_ylabel("total utility")
    axes[1].bar(names, [r["average_envy"] for r in rows], color="tab:red")
    axes[1].set_ylabel("average envy")
    return [_save(fig, Path(result.config.output_dir) / f"{result.config.name}_policies.png")]


def render(result: ExperimentResult) -> list[Path]:
    kind = result.config.kind
    if kind == "ocef_sweep":
        return plot_sweep(result, "problem", "alpha")
    if kind == "audit_run":
        return plot_sweep(result, "system", "alpha")
    if kind == "mispecification_sweep":
        return plot_mispecification(result)
    return plot_policies(result)
