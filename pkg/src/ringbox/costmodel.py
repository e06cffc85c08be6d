"""Analytic elapsed-time estimates for ring and multi-ring reductions.

A ring reduction over N ranks takes N-1 synchronized phases; each phase
moves 1/N of the payload over the slowest link in the ring and pays a fixed
per-phase latency.  Gigabyte means 1e9 bytes throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

GIGA = 1e9


@dataclass(frozen=True)
class DimensionCost:
    index: int
    size: int
    phases: int
    seconds: float
    bandwidth_gbps: float | None
    latency_s: float


@dataclass(frozen=True)
class CostEstimate:
    total: float
    phases: int
    per_dimension: tuple[DimensionCost, ...]
    bottleneck_bandwidth: float | None


@dataclass(frozen=True)
class ParameterServerEstimate:
    seconds: float
    gathered_gb: float


def _check(size_gb: float, ranks: int, bandwidth_gbps: float, latency_s: float) -> None:
    if size_gb < 0:
        raise ValueError(f"payload must be >= 0 GB, got {size_gb}")
    if ranks < 1:
        raise ValueError(f"rank count must be >= 1, got {ranks}")
    if bandwidth_gbps <= 0:
        raise ValueError(f"bandwidth must be > 0 GB/s, got {bandwidth_gbps}")
    if latency_s < 0:
        raise ValueError(f"latency must be >= 0 s, got {latency_s}")


def ring_reduction_time(
    size_gb: float, ranks: int, bandwidth_gbps: float, latency_s: float = 0.0
) -> CostEstimate:
    """Single reduce-scatter pass: (N-1) * (S / (N * B) + L)."""
    _check(size_gb, ranks, bandwidth_gbps, latency_s)
    phases = ranks - 1
    total = phases * (size_gb / (ranks * bandwidth_gbps) + latency_s)
    dim = DimensionCost(
        index=0,
        size=ranks,
        phases=phases,
        seconds=total,
        bandwidth_gbps=bandwidth_gbps,
        latency_s=latency_s,
    )
    return CostEstimate(
        total=total, phases=phases, per_dimension=(dim,), bottleneck_bandwidth=bandwidth_gbps
    )


def allreduce_time(
    size_gb: float, ranks: int, bandwidth_gbps: float, latency_s: float = 0.0
) -> CostEstimate:
    """Reduce-scatter plus allgather: twice the single-pass estimate."""
    one = ring_reduction_time(size_gb, ranks, bandwidth_gbps, latency_s)
    dim = DimensionCost(
        index=0,
        size=ranks,
        phases=2 * one.phases,
        seconds=2 * one.total,
        bandwidth_gbps=bandwidth_gbps,
        latency_s=latency_s,
    )
    return CostEstimate(
        total=2 * one.total,
        phases=2 * one.phases,
        per_dimension=(dim,),
        bottleneck_bandwidth=bandwidth_gbps,
    )


def multiring_time(size_gb: float, dims, latency_s: float = 0.0) -> CostEstimate:
    """Allreduce over an m-dimensional decomposition.

    `dims` is a sequence of (size, bandwidth_gbps) or
    (size, bandwidth_gbps, latency_s) tuples, innermost dimension first.
    Dimension i reduce-scatters the payload left over by the inner
    dimensions, S_i = S / (d_1 * ... * d_{i-1}); the allgather pass retraces
    the dimensions in reverse at the same per-dimension cost.
    """
    if size_gb < 0:
        raise ValueError(f"payload must be >= 0 GB, got {size_gb}")
    if latency_s < 0:
        raise ValueError(f"latency must be >= 0 s, got {latency_s}")
    dims = list(dims)
    if not dims:
        raise ValueError("dims must not be empty")
    per_dim: list[DimensionCost] = []
    shrink = 1
    total = 0.0
    phases = 0
    bottleneck: float | None = None
    for i, spec in enumerate(dims):
        if len(spec) == 2:
            d, bw = spec
            lat = latency_s
        else:
            d, bw, lat = spec
            if lat is None:
                lat = latency_s
        if d < 1:
            raise ValueError(f"dimension size must be >= 1, got {d}")
        if d > 1 and (bw is None or bw <= 0):
            raise ValueError(f"bandwidth must be > 0 GB/s, got {bw}")
        if d == 1:
            per_dim.append(DimensionCost(i, 1, 0, 0.0, bw, lat))
            continue
        sub = size_gb / shrink
        one_pass = (d - 1) * (sub / (d * bw) + lat)
        per_dim.append(
            DimensionCost(
                index=i,
                size=d,
                phases=2 * (d - 1),
                seconds=2 * one_pass,
                bandwidth_gbps=bw,
                latency_s=lat,
            )
        )
        total += 2 * one_pass
        phases += 2 * (d - 1)
        shrink *= d
        if bottleneck is None or bw < bottleneck:
            bottleneck = bw
    return CostEstimate(
        total=total, phases=phases, per_dimension=tuple(per_dim), bottleneck_bandwidth=bottleneck
    )


def parameter_server_time(
    size_per_rank_gb: float, ranks: int, bandwidth_gbps: float
) -> ParameterServerEstimate:
    """Time to gather every rank's payload into one server.

    Distribution of the result is deliberately excluded; this is the
    gather-only lower bound for the centralized baseline.
    """
    if size_per_rank_gb <= 0 or ranks < 1:
        raise ValueError("payload and rank count must be positive")
    if bandwidth_gbps <= 0:
        raise ValueError(f"bandwidth must be > 0 GB/s, got {bandwidth_gbps}")
    gathered = ranks * size_per_rank_gb
    return ParameterServerEstimate(seconds=gathered / bandwidth_gbps, gathered_gb=gathered)
