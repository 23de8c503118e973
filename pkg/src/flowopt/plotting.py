"""PNG figures written next to CSV/JSON reports (headless Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def training_curve(history, path, title="Scheduler training") -> Path:
    """Episode return and mean cycle time per episode."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    episodes = [row["episode"] for row in history]
    ax.plot(episodes, [row["return"] for row in history], marker=".", color="tab:blue")
    ax.set_xlabel("episode")
    ax.set_ylabel("return", color="tab:blue")
    cycle = [(row["episode"], row["mean_cycle_time"]) for row in history if row["mean_cycle_time"] is not None]
    if cycle:
        ax2 = ax.twinx()
        ax2.plot(*zip(*cycle), marker=".", color="tab:orange")
        ax2.set_ylabel("mean cycle time", color="tab:orange")
    ax.set_title(title)
    return _save(fig, path)


def loss_curve(losses, path, title="Detector training") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(losses) + 1), losses, marker=".")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross-entropy")
    ax.set_title(title)
    return _save(fig, path)


def bench_improvement(rows, regression, path) -> Path:
    """Cycle-time improvement against scale, with the fitted line."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    pts = [(r["scale"], r["improvement_pct"]) for r in rows if r.get("improvement_pct") is not None]
    if pts:
        xs, ys = zip(*pts)
        ax.scatter(xs, ys, zorder=3)
        for r in rows:
            if r.get("improvement_pct") is not None:
                ax.annotate(r["label"], (r["scale"], r["improvement_pct"]), textcoords="offset points",
                            xytext=(4, 4), fontsize=8)
        if regression:
            lo, hi = min(xs), max(xs)
            ax.plot([lo, hi], [regression["intercept"] + regression["slope"] * x for x in (lo, hi)],
                    color="tab:red", label=f"R² = {regression['r_squared']:.3f}")
            ax.legend()
    ax.set_xlabel("scale (cases/day)")
    ax.set_ylabel("cycle-time improvement (%)")
    return _save(fig, path)


def bench_cycle_times(rows, path) -> Path:
    """Baseline vs optimized mean cycle time per scenario."""
    ok = [r for r in rows if r["status"] == "Done"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.38
    xs = range(len(ok))
    ax.bar([x - width / 2 for x in xs], [r["baseline_cycle_time"] or 0.0 for r in ok], width, label="baseline")
    ax.bar([x + width / 2 for x in xs], [r["optimized_cycle_time"] or 0.0 for r in ok], width, label="optimized")
    ax.set_xticks(list(xs), [r["label"] for r in ok])
    ax.set_ylabel("mean cycle time")
    ax.legend()
    return _save(fig, path)


def policy_cycle_times(reports, path) -> Path:
    """Mean cycle time per evaluated policy."""
    names = list(reports)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(names, [reports[n].mean_cycle_time or 0.0 for n in names])
    ax.set_ylabel("mean cycle time")
    return _save(fig, path)


def bottleneck_waits(report, path) -> Path:
    """Mean queue wait per activity, in ranking order."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(report.ranking, [report.mean_wait[a] for a in report.ranking])
    ax.set_ylabel("mean queue wait")
    ax.tick_params(axis="x", labelrotation=30)
    return _save(fig, path)
