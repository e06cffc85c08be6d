"""Deterministic phase-level simulation of a schedule over a topology.

Each phase routes every transfer through the tree, sums bytes per directed
link, and completes when the most loaded link finishes; bytes sharing a
directed link serialize.  One latency charge per phase: the largest level
latency among the links the phase touches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .multiring import Plan
from .ring import RingOrder, Schedule
from .topology import Topology


@dataclass(frozen=True)
class PhaseStat:
    index: int
    seconds: float
    binding_link: str | None  # "a->b" of the link that sets the phase time
    max_link_bytes: int


@dataclass(frozen=True)
class ContentionEvent:
    phase: int
    link: str  # "a->b"; the direction is part of the identity
    transfers: int


@dataclass(frozen=True)
class SimResult:
    elapsed: float
    per_phase: tuple[PhaseStat, ...]
    contention_events: tuple[ContentionEvent, ...] = field(default=())


def simulate(
    t: Topology, schedule: Schedule, order: RingOrder, bytes_per_element: int
) -> SimResult:
    if len(order) != schedule.ranks:
        raise ValueError(
            f"order has {len(order)} devices but schedule expects {schedule.ranks} ranks"
        )
    route_cache: dict[tuple[str, str], list] = {}
    stats: list[PhaseStat] = []
    events: list[ContentionEvent] = []
    elapsed = 0.0
    for idx, phase in enumerate(schedule.phases):
        loads: dict[tuple[str, str], int] = {}
        counts: dict[tuple[str, str], int] = {}
        links: dict[tuple[str, str], object] = {}
        for tr in phase.transfers:
            key = (order.devices[tr.src], order.devices[tr.dst])
            if key not in route_cache:
                route_cache[key] = t.route(*key)
            for hop in route_cache[key]:
                loads[hop.direction] = loads.get(hop.direction, 0) + tr.length * bytes_per_element
                counts[hop.direction] = counts.get(hop.direction, 0) + 1
                links[hop.direction] = hop.link
        seconds = 0.0
        binding = None
        binding_bytes = 0
        for direction, nbytes in loads.items():
            xfer = nbytes / (links[direction].bandwidth_gbps * 1e9)
            if binding is None or xfer > seconds:
                seconds = xfer
                binding = direction
                binding_bytes = nbytes
        if links:
            seconds += max(link.latency_s for link in links.values())
        for direction, cnt in counts.items():
            if cnt > 1:
                events.append(
                    ContentionEvent(phase=idx, link=f"{direction[0]}->{direction[1]}", transfers=cnt)
                )
        stats.append(
            PhaseStat(
                index=idx,
                seconds=seconds,
                binding_link=f"{binding[0]}->{binding[1]}" if binding else None,
                max_link_bytes=binding_bytes,
            )
        )
        elapsed += seconds
    return SimResult(elapsed=elapsed, per_phase=tuple(stats), contention_events=tuple(events))


def compare_model(t: Topology, plan: Plan) -> dict:
    """Simulated vs modeled elapsed time for a plan's schedule."""
    result = simulate(t, plan.schedule, plan.order, plan.bytes_per_element)
    modeled = plan.estimate.total
    if modeled > 0:
        gap = (result.elapsed - modeled) / modeled
    else:
        gap = result.elapsed
    return {
        "modeled": modeled,
        "simulated": result.elapsed,
        "relative_gap": gap,
        "contention_events": len(result.contention_events),
    }
