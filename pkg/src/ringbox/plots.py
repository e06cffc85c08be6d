"""Figure rendering for sweep reports and simulation results.

Figures are written to files next to the delimited output; the Agg backend
keeps this usable in headless runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import SweepReport
from .simulator import SimResult


def save_sweep_figure(report: SweepReport, path: str) -> str:
    ns = [r.n for r in report.rows]
    eff = [r.efficiency for r in report.rows]
    over = [1e3 * r.overhead_s for r in report.rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(ns, eff, marker="o")
    ax1.set_xscale("log", base=2)
    ax1.set_xlabel("ranks")
    ax1.set_ylabel("scaling efficiency")
    ax1.set_ylim(0, 1.05)
    ax1.grid(True, alpha=0.3)
    ax1.set_title(f"efficiency (baseline: {report.baseline})")

    ax2.plot(ns, over, marker="s", color="tab:red")
    ax2.set_xscale("log", base=2)
    ax2.set_xlabel("ranks")
    ax2.set_ylabel("overhead [ms]")
    ax2.grid(True, alpha=0.3)
    ax2.set_title("communication overhead")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_phase_figure(result: SimResult, path: str) -> str:
    idx = [p.index for p in result.per_phase]
    secs = [1e3 * p.seconds for p in result.per_phase]
    contended = {e.phase for e in result.contention_events}
    colors = ["tab:red" if i in contended else "tab:blue" for i in idx]

    fig, ax = plt.subplots(figsize=(max(4, 0.25 * len(idx) + 2), 3.2))
    ax.bar(idx, secs, color=colors)
    ax.set_xlabel("phase")
    ax.set_ylabel("time [ms]")
    title = f"simulated elapsed {result.elapsed * 1e3:.3f} ms"
    if contended:
        title += f" ({len(contended)} contended phases in red)"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
