"""Scaling-efficiency and communication-overhead metrics, plus modeled sweeps.

Efficiency is the baseline iteration time divided by the distributed
iteration time at fixed per-rank batch; overhead is the difference.  The
sweep combines the planner's modeled allreduce time with a constant compute
time per iteration (no compute/communication overlap).
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field

from .multiring import plan
from .topology import Topology

CSV_HEADER = "n,t_iter_s,efficiency,overhead_s,modeled_comm_s"


@dataclass
class IterationTiming:
    """Measured per-iteration wall times for one rank count."""

    ranks: int
    times: list[float]
    compute_baseline: float
    warmup: int = 2

    def kept(self) -> list[float]:
        kept = self.times[self.warmup :]
        if not kept:
            raise ValueError(f"no samples left after dropping {self.warmup} warm-up iterations")
        if any(t < 0 for t in kept):
            raise ValueError("iteration times must be >= 0")
        return kept

    def mean(self) -> float:
        return statistics.fmean(self.kept())

    def median(self) -> float:
        return statistics.median(self.kept())


def scaling_efficiency(t_single: float, t_distributed: float, n: int = 0) -> float:
    """Baseline iteration time over distributed iteration time."""
    if t_single <= 0 or t_distributed <= 0:
        raise ValueError("iteration times must be positive")
    return t_single / t_distributed


def communication_overhead(t_distributed: float, t_single: float) -> float:
    """Distributed minus baseline iteration time; negative values pass through."""
    if t_distributed < 0 or t_single < 0:
        raise ValueError("iteration times must be >= 0")
    return t_distributed - t_single


@dataclass(frozen=True)
class SweepRow:
    n: int
    t_iter_s: float
    efficiency: float
    overhead_s: float
    modeled_comm_s: float


@dataclass
class SweepReport:
    baseline: str  # 'gpu' (single device) or 'node' (smallest rank count swept)
    baseline_time_s: float
    rows: list[SweepRow] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.n},{r.t_iter_s:.9g},{r.efficiency:.9g},{r.overhead_s:.9g},"
                f"{r.modeled_comm_s:.9g}"
            )
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "baseline": self.baseline,
                "baseline_time_s": self.baseline_time_s,
                "rows": [vars(r) for r in self.rows],
            },
            indent=2,
            sort_keys=True,
        )


def sweep(
    t: Topology,
    size_gb: float,
    rank_counts: list[int],
    latency_s: float,
    compute_s: float,
    baseline: str = "node",
    max_dims: int = 3,
) -> SweepReport:
    """Model iteration time = compute + planned allreduce for each rank count.

    baseline='gpu' measures efficiency against the communication-free single
    device; baseline='node' against the smallest rank count in the sweep
    (the convention that inflates the metric least honestly is a matter of
    labeling, so the report records which one was used).
    """
    if baseline not in ("gpu", "node"):
        raise ValueError(f"baseline must be 'gpu' or 'node', got {baseline!r}")
    if compute_s <= 0:
        raise ValueError("compute time per iteration must be positive")
    devices = t.devices()
    rows: list[tuple[int, float, float]] = []
    for n in sorted(rank_counts):
        if n < 1 or n > len(devices):
            raise ValueError(f"rank count {n} outside [1, {len(devices)}]")
        if n == 1:
            comm = 0.0
        else:
            p = plan(t, devices[:n], size_gb, max_dims=max_dims, latency_s=latency_s)
            comm = p.estimate.total
        rows.append((n, compute_s + comm, comm))
    base_time = compute_s if baseline == "gpu" else rows[0][1]
    report = SweepReport(baseline=baseline, baseline_time_s=base_time)
    for n, t_iter, comm in rows:
        report.rows.append(
            SweepRow(
                n=n,
                t_iter_s=t_iter,
                efficiency=scaling_efficiency(base_time, t_iter, n),
                overhead_s=communication_overhead(t_iter, base_time),
                modeled_comm_s=comm,
            )
        )
    return report
