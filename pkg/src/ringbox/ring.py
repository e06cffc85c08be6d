"""Phase-by-phase transfer schedules for ring reduce-scatter and allgather.

A schedule is fully materialized data: an ordered list of globally
synchronized phases, each a set of directed point-to-point transfers of
element ranges.  The simulator, the socket runtime, and the in-memory
replay used by the tests all consume the same artifact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import Topology

ADD = "add"
REPLACE = "replace"


@dataclass(frozen=True)
class Transfer:
    src: int  # ring/grid position of the sender
    dst: int
    chunk_index: int
    offset: int  # element index into the object
    length: int  # element count; zero-length transfers are legal
    combine: str  # ADD (reduce-scatter) or REPLACE (allgather)


@dataclass(frozen=True)
class Phase:
    transfers: tuple[Transfer, ...]


@dataclass(frozen=True)
class Schedule:
    ranks: int
    element_count: int
    phases: tuple[Phase, ...]
    kind: str  # reduce_scatter | allgather | composite


@dataclass(frozen=True)
class RingOrder:
    """Device id occupying each ring position."""

    devices: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.devices)

    def position_of(self, device: str) -> int:
        return self.devices.index(device)


def chunk_bounds(element_count: int, n_chunks: int, index: int) -> tuple[int, int]:
    """Contiguous partition of [0, element_count) into n_chunks pieces.

    The remainder r = element_count mod n_chunks goes one extra element to
    chunks 0..r-1, so the pieces tile the range in order.
    """
    if n_chunks < 1:
        raise ValueError(f"n_chunks must be >= 1, got {n_chunks}")
    if not 0 <= index < n_chunks:
        raise ValueError(f"chunk index {index} out of range [0, {n_chunks})")
    base, rem = divmod(element_count, n_chunks)
    if index < rem:
        return index * (base + 1), base + 1
    return rem * (base + 1) + (index - rem) * base, base


def ring_pass_transfers(
    members: list[int], region_offset: int, region_length: int, kind: str
) -> list[list[Transfer]]:
    """Per-phase transfers for one ring over one contiguous data region.

    Reduce-scatter: d-1 phases; position i sends chunk (i-j) mod d to its
    successor with combine=add, leaving position i owning chunk (i+1) mod d.
    Allgather: d-1 phases starting from that ownership, combine=replace.
    """
    d = len(members)
    phases: list[list[Transfer]] = []
    for j in range(d - 1):
        transfers = []
        for p, rank in enumerate(members):
            if kind == "reduce_scatter":
                c = (p - j) % d
            else:
                c = (p + 1 - j) % d
            off, length = chunk_bounds(region_length, d, c)
            transfers.append(
                Transfer(
                    src=rank,
                    dst=members[(p + 1) % d],
                    chunk_index=c,
                    offset=region_offset + off,
                    length=length,
                    combine=ADD if kind == "reduce_scatter" else REPLACE,
                )
            )
        phases.append(transfers)
    return phases


def reduce_scatter_schedule(order: RingOrder, element_count: int) -> Schedule:
    n = len(order)
    if n < 1:
        raise ValueError("ring needs at least one member")
    phase_lists = ring_pass_transfers(list(range(n)), 0, element_count, "reduce_scatter")
    return Schedule(
        ranks=n,
        element_count=element_count,
        phases=tuple(Phase(tuple(ts)) for ts in phase_lists),
        kind="reduce_scatter",
    )


def allgather_schedule(order: RingOrder, element_count: int) -> Schedule:
    n = len(order)
    if n < 1:
        raise ValueError("ring needs at least one member")
    phase_lists = ring_pass_transfers(list(range(n)), 0, element_count, "allgather")
    return Schedule(
        ranks=n,
        element_count=element_count,
        phases=tuple(Phase(tuple(ts)) for ts in phase_lists),
        kind="allgather",
    )


def allreduce_schedule(order: RingOrder, element_count: int) -> Schedule:
    rs = reduce_scatter_schedule(order, element_count)
    ag = allgather_schedule(order, element_count)
    return Schedule(
        ranks=len(order),
        element_count=element_count,
        phases=rs.phases + ag.phases,
        kind="composite",
    )


def order_ranks_on_tree(t: Topology, devices: list[str]) -> RingOrder:
    """Place devices on the ring in depth-first leaf order.

    With this order every directed tree link carries at most one transfer
    per ring phase: the leaves below any subtree form one contiguous arc of
    the ring, so exactly one ring edge leaves the subtree upward and one
    enters it downward.
    """
    wanted = set(devices)
    for dev in devices:
        if dev not in t.nodes:
            raise ValueError(f"unknown device '{dev}'")
        if not t.is_leaf(dev) or t.nodes[dev].kind != "device":
            raise ValueError(f"'{dev}' is not a device leaf")
    ordered = [leaf for leaf in t.dfs_leaves() if leaf in wanted]
    return RingOrder(devices=tuple(ordered))


def phase_link_usage(t: Topology, phase: Phase, order: RingOrder) -> dict[tuple[str, str], int]:
    """Concurrent transfer count per directed link, by routing every transfer."""
    usage: dict[tuple[str, str], int] = {}
    for tr in phase.transfers:
        src_dev = order.devices[tr.src]
        dst_dev = order.devices[tr.dst]
        for hop in t.route(src_dev, dst_dev):
            usage[hop.direction] = usage.get(hop.direction, 0) + 1
    return usage


def replay(schedule: Schedule, buffers: list[np.ndarray]) -> list[np.ndarray]:
    """Execute a schedule in memory over per-rank buffers.

    Phases are synchronized: every send reads the sender's pre-phase state,
    then all receives apply.  Returns new buffers; inputs are not modified.
    """
    if len(buffers) != schedule.ranks:
        raise ValueError(f"need {schedule.ranks} buffers, got {len(buffers)}")
    bufs = [np.array(b, copy=True) for b in buffers]
    for phase in schedule.phases:
        staged = []
        for tr in phase.transfers:
            payload = bufs[tr.src][tr.offset : tr.offset + tr.length].copy()
            staged.append((tr, payload))
        for tr, payload in staged:
            view = bufs[tr.dst][tr.offset : tr.offset + tr.length]
            if tr.combine == ADD:
                view += payload
            else:
                view[:] = payload
    return bufs


def dump_schedule(schedule: Schedule) -> str:
    """One transfer per line: `phase src dst chunk offset length combine`."""
    lines = []
    for i, phase in enumerate(schedule.phases):
        for tr in phase.transfers:
            lines.append(
                f"{i} {tr.src} {tr.dst} {tr.chunk_index} {tr.offset} {tr.length} {tr.combine}"
            )
    return "\n".join(lines) + ("\n" if lines else "")
