"""Topology-aware multi-dimensional ring allreduce toolkit."""

from .costmodel import (
    CostEstimate,
    allreduce_time,
    multiring_time,
    parameter_server_time,
    ring_reduction_time,
)
from .multiring import (
    Decomposition,
    Grid,
    Plan,
    build_grid,
    factorizations,
    multiring_schedule,
    plan,
)
from .ring import (
    Phase,
    RingOrder,
    Schedule,
    Transfer,
    allgather_schedule,
    chunk_bounds,
    dump_schedule,
    order_ranks_on_tree,
    phase_link_usage,
    reduce_scatter_schedule,
    replay,
)
from .runtime import (
    CollectiveError,
    LaunchReport,
    PlacedBuffer,
    RankResult,
    Workload,
    assign,
    launch,
)
from .simulator import SimResult, compare_model, simulate
from .topology import Level, Link, Node, Topology, TopologyError, build_tree, load_topology, parse_topology

__all__ = [
    "CollectiveError",
    "CostEstimate",
    "Decomposition",
    "Grid",
    "LaunchReport",
    "PlacedBuffer",
    "RankResult",
    "Workload",
    "assign",
    "launch",
    "Level",
    "Link",
    "Node",
    "Phase",
    "Plan",
    "RingOrder",
    "Schedule",
    "SimResult",
    "Topology",
    "TopologyError",
    "Transfer",
    "allgather_schedule",
    "allreduce_time",
    "build_grid",
    "build_tree",
    "chunk_bounds",
    "compare_model",
    "dump_schedule",
    "factorizations",
    "load_topology",
    "multiring_schedule",
    "multiring_time",
    "order_ranks_on_tree",
    "parameter_server_time",
    "parse_topology",
    "phase_link_usage",
    "plan",
    "reduce_scatter_schedule",
    "replay",
    "ring_reduction_time",
    "simulate",
]

__version__ = "0.1.0"
