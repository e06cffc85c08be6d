"""Grid decomposition of the rank set and composite multi-ring schedules.

N ranks are arranged in an m-dimensional grid N = d_1 * ... * d_m with the
innermost dimension varying fastest over the depth-first device order, so
dimension 1 groups topologically adjacent devices.  Reduce-scatter runs
dimension by dimension inward-out over a shrinking data region; allgather
retraces the dimensions in reverse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import costmodel
from .costmodel import CostEstimate
from .ring import Phase, RingOrder, Schedule, chunk_bounds, order_ranks_on_tree, ring_pass_transfers
from .topology import Topology


@dataclass(frozen=True)
class Grid:
    dims: tuple[int, ...]

    @property
    def size(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    def coords(self, rank: int) -> tuple[int, ...]:
        """Mixed-radix digits of the rank, first dimension fastest-varying."""
        out = []
        for d in self.dims:
            out.append(rank % d)
            rank //= d
        return tuple(out)

    def rank_of(self, coords: tuple[int, ...]) -> int:
        rank = 0
        stride = 1
        for c, d in zip(coords, self.dims):
            rank += c * stride
            stride *= d
        return rank

    def rings(self, dim: int) -> list[list[int]]:
        """Rank groups that differ only in coordinate `dim`, ordered by it."""
        groups: dict[tuple[int, ...], list[int]] = {}
        for rank in range(self.size):
            c = self.coords(rank)
            key = c[:dim] + c[dim + 1 :]
            groups.setdefault(key, []).append(rank)
        return [sorted(g, key=lambda r: self.coords(r)[dim]) for g in groups.values()]


@dataclass(frozen=True)
class DimensionSpec:
    size: int
    level: str | None
    bandwidth_gbps: float | None
    latency_s: float


@dataclass(frozen=True)
class Decomposition:
    dims: tuple[DimensionSpec, ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(d.size for d in self.dims)


@dataclass
class Plan:
    decomposition: Decomposition
    grid: Grid
    order: RingOrder
    schedule: Schedule
    estimate: CostEstimate
    size_gb: float
    element_count: int
    bytes_per_element: int

    def to_json(self) -> str:
        doc = {
            "ranks": self.grid.size,
            "dims": [
                {
                    "size": spec.size,
                    "level": spec.level,
                    "bandwidth_gbps": spec.bandwidth_gbps,
                    "latency_s": spec.latency_s,
                    "phases": dim.phases,
                    "seconds": dim.seconds,
                }
                for spec, dim in zip(self.decomposition.dims, self.estimate.per_dimension)
            ],
            "devices": list(self.order.devices),
            "size_gb": self.size_gb,
            "element_count": self.element_count,
            "bytes_per_element": self.bytes_per_element,
            "total_s": self.estimate.total,
            "phases": self.estimate.phases,
            "bottleneck_bandwidth_gbps": self.estimate.bottleneck_bandwidth,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "Plan":
        doc = json.loads(text)
        dims = tuple(
            DimensionSpec(
                size=d["size"],
                level=d["level"],
                bandwidth_gbps=d["bandwidth_gbps"],
                latency_s=d["latency_s"],
            )
            for d in doc["dims"]
        )
        decomp = Decomposition(dims=dims)
        grid = Grid(dims=tuple(d.size for d in dims))
        order = RingOrder(devices=tuple(doc["devices"]))
        schedule = multiring_schedule(grid, doc["element_count"])
        estimate = costmodel.multiring_time(
            doc["size_gb"], [(d.size, d.bandwidth_gbps, d.latency_s) for d in dims]
        )
        return Plan(
            decomposition=decomp,
            grid=grid,
            order=order,
            schedule=schedule,
            estimate=estimate,
            size_gb=doc["size_gb"],
            element_count=doc["element_count"],
            bytes_per_element=doc["bytes_per_element"],
        )


def factorizations(n: int, max_dims: int) -> list[tuple[int, ...]]:
    """All ordered factor tuples of n with entries >= 2 and length <= max_dims,
    plus the trivial flat tuple (n,); lexicographically sorted."""
    if n < 1 or max_dims < 1:
        raise ValueError("n and max_dims must be >= 1")
    found: set[tuple[int, ...]] = {(n,)}

    def rec(rest: int, prefix: tuple[int, ...]) -> None:
        if rest == 1 and prefix:
            found.add(prefix)
            return
        if len(prefix) == max_dims:
            return
        for f in range(2, rest + 1):
            if rest % f == 0:
                rec(rest // f, prefix + (f,))

    rec(n, ())
    return sorted(found)


def build_grid(ranks: list[int] | int, dims: tuple[int, ...]) -> Grid:
    n = ranks if isinstance(ranks, int) else len(ranks)
    grid = Grid(dims=tuple(dims))
    if grid.size != n:
        raise ValueError(f"dims {dims} have product {grid.size}, expected {n}")
    return grid


def multiring_schedule(grid: Grid, element_count: int) -> Schedule:
    """Composite schedule: reduce-scatter dims 1..m, then allgather m..1.

    Every ring of a dimension shares the same data region (fixed by the
    inner coordinates), so stage phases are built across all of the
    dimension's rings at once.
    """
    n = grid.size
    regions: dict[int, tuple[int, int]] = {r: (0, element_count) for r in range(n)}
    stage_regions: list[dict[int, tuple[int, int]]] = []
    phases: list[Phase] = []

    for dim, d in enumerate(grid.dims):
        stage_regions.append(dict(regions))
        if d == 1:
            continue
        rings = grid.rings(dim)
        per_phase: list[list] = [[] for _ in range(d - 1)]
        for members in rings:
            off, length = regions[members[0]]
            for j, transfers in enumerate(
                ring_pass_transfers(members, off, length, "reduce_scatter")
            ):
                per_phase[j].extend(transfers)
            for p, rank in enumerate(members):
                sub_off, sub_len = chunk_bounds(length, d, (p + 1) % d)
                regions[rank] = (off + sub_off, sub_len)
        phases.extend(Phase(tuple(ts)) for ts in per_phase)

    for dim in range(len(grid.dims) - 1, -1, -1):
        d = grid.dims[dim]
        if d == 1:
            continue
        rings = grid.rings(dim)
        per_phase = [[] for _ in range(d - 1)]
        for members in rings:
            off, length = stage_regions[dim][members[0]]
            for j, transfers in enumerate(ring_pass_transfers(members, off, length, "allgather")):
                per_phase[j].extend(transfers)
        phases.extend(Phase(tuple(ts)) for ts in per_phase)

    return Schedule(ranks=n, element_count=element_count, phases=tuple(phases), kind="composite")


def ring_partner_pairs(grid: Grid) -> set[tuple[int, int]]:
    """Unordered rank pairs that exchange data in some phase of the grid."""
    pairs: set[tuple[int, int]] = set()
    for dim, d in enumerate(grid.dims):
        if d == 1:
            continue
        for members in grid.rings(dim):
            for p, rank in enumerate(members):
                nxt = members[(p + 1) % d]
                if rank != nxt:
                    pairs.add((min(rank, nxt), max(rank, nxt)))
    return pairs


def evaluate_decomposition(
    t: Topology,
    order: RingOrder,
    sizes: tuple[int, ...],
    size_gb: float,
    latency_s: float | None = None,
) -> tuple[Decomposition, CostEstimate]:
    """Bind dimension sizes to the links they actually cross and cost them.

    Each dimension's bandwidth is the worst link bandwidth crossed by any of
    its rings, and its latency the largest level latency among those links
    (the simulator charges the same), so unaligned factorizations are scored
    pessimistically rather than rejected.
    """
    grid = build_grid(len(order), sizes)
    specs: list[DimensionSpec] = []
    for dim, d in enumerate(grid.dims):
        if d == 1:
            specs.append(DimensionSpec(size=1, level=None, bandwidth_gbps=None, latency_s=0.0))
            continue
        worst_bw = float("inf")
        worst_level = None
        max_lat = 0.0
        for members in grid.rings(dim):
            devs = [order.devices[r] for r in members]
            for i in range(len(devs)):
                a, b = devs[i], devs[(i + 1) % len(devs)]
                for hop in t.route(a, b):
                    if hop.link.bandwidth_gbps < worst_bw:
                        worst_bw = hop.link.bandwidth_gbps
                        worst_level = hop.link.level
                    max_lat = max(max_lat, hop.link.latency_s)
        lat = latency_s if latency_s is not None else max_lat
        specs.append(
            DimensionSpec(size=d, level=worst_level, bandwidth_gbps=worst_bw, latency_s=lat)
        )
    decomp = Decomposition(dims=tuple(specs))
    estimate = costmodel.multiring_time(
        size_gb, [(s.size, s.bandwidth_gbps, s.latency_s) for s in specs]
    )
    return decomp, estimate


def _aligned_element_count(size_gb: float, bytes_per_element: int, n: int) -> int:
    raw = max(0, round(size_gb * 1e9 / bytes_per_element))
    if n == 0:
        return raw
    return -(-raw // n) * n  # round up to a multiple of N so chunks divide evenly


def plan(
    t: Topology,
    devices: list[str],
    size_gb: float,
    max_dims: int = 3,
    latency_s: float | None = None,
    bytes_per_element: int = 4,
    dims: tuple[int, ...] | None = None,
) -> Plan:
    """Pick the minimum-modeled-time decomposition for these devices.

    Exhaustively scores every factorization of N up to max_dims dimensions;
    ties break toward fewer dimensions, then lexicographic sizes.  Passing
    `dims` skips the search and evaluates that decomposition.
    """
    if not devices:
        raise ValueError("device list must not be empty")
    order = order_ranks_on_tree(t, devices)
    n = len(order)
    candidates = [tuple(dims)] if dims is not None else factorizations(n, max_dims)
    best = None
    for sizes in candidates:
        decomp, estimate = evaluate_decomposition(t, order, sizes, size_gb, latency_s)
        key = (estimate.total, len(sizes), sizes)
        if best is None or key < best[0]:
            best = (key, sizes, decomp, estimate)
    _, sizes, decomp, estimate = best
    grid = build_grid(n, sizes)
    element_count = _aligned_element_count(size_gb, bytes_per_element, n)
    eff_gb = element_count * bytes_per_element / 1e9
    decomp, estimate = evaluate_decomposition(t, order, sizes, eff_gb, latency_s)
    return Plan(
        decomposition=decomp,
        grid=grid,
        order=order,
        schedule=multiring_schedule(grid, element_count),
        estimate=estimate,
        size_gb=size_gb,
        element_count=element_count,
        bytes_per_element=bytes_per_element,
    )
