"""Command-line front end: plan, simulate, run, and bench subcommands."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import runtime
from .multiring import Plan, plan as make_plan
from .ring import RingOrder, dump_schedule
from .simulator import simulate
from .topology import TopologyError, load_topology, override_latency

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _die(message: str, code: int = EXIT_USAGE) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _parse_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"bad dims {text!r}; expected e.g. 4x16x4")
    if not dims or any(d < 1 for d in dims):
        raise ValueError(f"bad dims {text!r}; sizes must be >= 1")
    return dims


def _load_topology(args):
    t = load_topology(args.topology)
    if args.latency_s is not None:
        t = override_latency(t, args.latency_s)
    return t


def _load_plan_args(args) -> Plan:
    t = _load_topology(args)
    devices = t.devices()
    if args.ranks is not None:
        if args.ranks < 1 or args.ranks > len(devices):
            raise ValueError(f"--ranks {args.ranks} outside [1, {len(devices)}]")
        devices = devices[: args.ranks]
    dims = _parse_dims(args.dims) if args.dims else None
    return make_plan(
        t,
        devices,
        args.size_gb,
        max_dims=args.max_dims,
        dims=dims,
    )


def cmd_plan(args) -> int:
    if args.size_gb is None or args.size_gb <= 0:
        return _die("--size-gb must be given and positive")
    p = _load_plan_args(args)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(p.to_json())
    if args.format == "json":
        print(p.to_json())
    else:
        sizes = "x".join(str(d) for d in p.grid.dims)
        print(f"ranks:      {p.grid.size}")
        print(f"dims:       {sizes}")
        for spec, dim in zip(p.decomposition.dims, p.estimate.per_dimension):
            if spec.size == 1:
                continue
            print(
                f"  dim {dim.index}: size {spec.size:>4}  level {spec.level}  "
                f"{spec.bandwidth_gbps} GB/s  {dim.phases} phases  {dim.seconds * 1e3:.3f} ms"
            )
        print(f"phases:     {p.estimate.phases}")
        print(f"bottleneck: {p.estimate.bottleneck_bandwidth} GB/s")
        print(f"modeled:    {p.estimate.total * 1e3:.3f} ms")
    return EXIT_OK


def cmd_simulate(args) -> int:
    t = _load_topology(args)
    if args.plan:
        with open(args.plan, "r", encoding="utf-8") as fh:
            p = Plan.from_json(fh.read())
    else:
        if args.size_gb is None or args.size_gb <= 0:
            return _die("--size-gb must be given and positive (or use --plan)")
        p = _load_plan_args(args)
    order = p.order
    if args.order == "swapped":
        if len(order) < 3:
            return _die("--order swapped needs at least 3 ranks")
        devs = list(order.devices)
        devs[1], devs[2] = devs[2], devs[1]  # break the depth-first arc structure
        order = RingOrder(devices=tuple(devs))
    if args.dump_schedule:
        with open(args.dump_schedule, "w", encoding="utf-8") as fh:
            fh.write(dump_schedule(p.schedule))
    result = simulate(t, p.schedule, order, p.bytes_per_element)
    modeled = p.estimate.total
    gap = (result.elapsed - modeled) / modeled if modeled > 0 else result.elapsed
    doc = {
        "modeled_s": modeled,
        "simulated_s": result.elapsed,
        "relative_gap": gap,
        "phases": len(result.per_phase),
        "contention_events": [
            {"phase": e.phase, "link": e.link, "transfers": e.transfers}
            for e in result.contention_events
        ],
    }
    if args.phase_csv:
        with open(args.phase_csv, "w", encoding="utf-8") as fh:
            fh.write("phase,seconds,binding_link,bytes\n")
            for ph in result.per_phase:
                fh.write(f"{ph.index},{ph.seconds:.9g},{ph.binding_link},{ph.max_link_bytes}\n")
        from .plots import save_phase_figure

        save_phase_figure(result, os.path.splitext(args.phase_csv)[0] + ".png")
    if args.fig:
        from .plots import save_phase_figure

        save_phase_figure(result, args.fig)
    if args.format == "json":
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(f"modeled:   {modeled * 1e3:.3f} ms")
        print(f"simulated: {result.elapsed * 1e3:.3f} ms  (gap {gap:+.2e})")
        for e in result.contention_events[:10]:
            print(f"contention: phase {e.phase} link {e.link} carries {e.transfers} transfers")
        if len(result.contention_events) > 10:
            print(f"... {len(result.contention_events) - 10} more contention events")
    return EXIT_OK


def cmd_run(args) -> int:
    n = args.n
    if n < 1 or n > args.process_cap:
        return _die(f"-n must be in [1, {args.process_cap}]")
    if args.dims:
        dims = _parse_dims(args.dims)
    elif args.plan:
        with open(args.plan, "r", encoding="utf-8") as fh:
            dims = Plan.from_json(fh.read()).grid.dims
    else:
        dims = (n,)
    rendezvous = None
    spec = args.rendezvous or os.environ.get("DDL_RENDEZVOUS")
    if spec:
        host, _, port = spec.rpartition(":")
        try:
            rendezvous = (host or "127.0.0.1", int(port))
        except ValueError:
            return _die(f"bad rendezvous address {spec!r}; expected host:port")
    workload = runtime.Workload(
        lengths=tuple([args.len] * args.iters), dtype=args.dtype, seed=args.seed
    )
    try:
        report = runtime.launch(n, dims, workload, rendezvous=rendezvous)
    except OSError as exc:
        return _die(f"cannot launch: {exc}")
    if not report.ok:
        print(f"error: {report.error}", file=sys.stderr)
        return EXIT_RUNTIME

    # serial oracle over the same deterministic inputs
    oracle_ok = True
    for it in range(args.iters):
        total = sum(
            runtime.generate_input(workload, it, r, args.len).astype(
                runtime.DTYPES[args.dtype]
            )
            for r in range(n)
        )
        expect = hashlib.sha256(np.asarray(total, dtype=runtime.DTYPES[args.dtype]).tobytes()).hexdigest()
        digests = {report.results[r].digests[it] for r in range(n)}
        if len(digests) != 1:
            oracle_ok = False
            print(f"iteration {it}: ranks disagree ({len(digests)} distinct digests)")
        elif args.dtype == "i64" and digests != {expect}:
            oracle_ok = False
            print(f"iteration {it}: digest differs from serial oracle")

    doc = {
        "ranks": n,
        "dims": list(report.dims),
        "iterations": [
            {
                "iteration": it,
                "times_s": [report.results[r].times[it] for r in range(n)],
                "digest": report.results[0].digests[it],
            }
            for it in range(args.iters)
        ],
        "bytes_sent": {str(r): report.results[r].bytes_sent for r in range(n)},
        "digests_agree": oracle_ok,
    }
    if args.format == "json":
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(f"ranks {n}, dims {'x'.join(map(str, report.dims))}, dtype {args.dtype}")
        for entry in doc["iterations"]:
            worst = max(entry["times_s"]) if entry["times_s"] else 0.0
            print(
                f"iter {entry['iteration']}: {worst * 1e3:.3f} ms (slowest rank), "
                f"digest {entry['digest'][:16]}..."
            )
        per_rank = ", ".join(f"{r}:{report.results[r].bytes_sent}" for r in range(n))
        print(f"bytes sent per rank: {per_rank}")
        print(f"all ranks agree: {oracle_ok}")
    return EXIT_OK if oracle_ok else EXIT_RUNTIME


def cmd_bench(args) -> int:
    t = _load_topology(args)
    if args.size_gb is None or args.size_gb < 0:
        return _die("--size-gb must be given and >= 0")
    try:
        rank_counts = [int(p) for p in args.rank_counts.split(",")]
    except ValueError:
        return _die(f"bad --rank-counts {args.rank_counts!r}; expected e.g. 4,16,64,256")
    report = bench_mod.sweep(
        t,
        args.size_gb,
        rank_counts,
        latency_s=None,
        compute_s=args.compute_s,
        baseline=args.baseline,
        max_dims=args.max_dims,
    )
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        from .plots import save_sweep_figure

        save_sweep_figure(report, os.path.splitext(args.csv)[0] + ".png")
    if args.fig:
        from .plots import save_sweep_figure

        save_sweep_figure(report, args.fig)
    if args.format == "json":
        print(report.to_json())
    else:
        print(report.to_csv(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringbox",
        description="Topology-aware multi-dimensional ring allreduce toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p, topology_required=True):
        p.add_argument("--topology", required=topology_required, help="topology JSON file")
        p.add_argument("--size-gb", type=float, default=None, help="payload size in GB (1e9 bytes)")
        p.add_argument("--latency-s", type=float, default=None, help="per-phase latency override")
        p.add_argument("--format", choices=["text", "json"], default="text")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-dims", type=int, default=3)

    p = sub.add_parser("plan", help="choose and report a decomposition")
    shared(p)
    p.add_argument("--ranks", type=int, default=None, help="use the first N devices")
    p.add_argument("--dims", default=None, help="evaluate a fixed decomposition, e.g. 4x16x4")
    p.add_argument("--output", default=None, help="write the plan JSON here")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="simulate a plan's schedule on the topology")
    shared(p)
    p.add_argument("--plan", default=None, help="plan JSON from `ringbox plan --output`")
    p.add_argument("--ranks", type=int, default=None)
    p.add_argument("--dims", default=None)
    p.add_argument(
        "--order",
        choices=["dfs", "swapped"],
        default="dfs",
        help="'swapped' demonstrates ring-order contention",
    )
    p.add_argument("--dump-schedule", default=None, help="write the transfer listing here")
    p.add_argument("--phase-csv", default=None, help="write per-phase CSV (+ PNG alongside)")
    p.add_argument("--fig", default=None, help="write a per-phase figure here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run real multi-process allreduces locally")
    p.add_argument("-n", type=int, required=True, help="number of worker processes")
    p.add_argument("--len", type=int, default=1024, help="elements per rank")
    p.add_argument("--iters", type=int, default=1)
    p.add_argument("--dtype", choices=sorted(runtime.DTYPES), default="i64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default=None, help="grid dims, e.g. 2x4 (default: flat ring)")
    p.add_argument("--plan", default=None, help="take dims from this plan JSON")
    p.add_argument("--rendezvous", default=None, help="host:port (or env DDL_RENDEZVOUS)")
    p.add_argument("--process-cap", type=int, default=16)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="modeled scaling-efficiency sweep")
    shared(p)
    p.add_argument("--rank-counts", required=True, help="comma list, e.g. 4,16,64,256")
    p.add_argument("--compute-s", type=float, required=True, help="compute time per iteration")
    p.add_argument("--baseline", choices=["gpu", "node"], default="node")
    p.add_argument("--iters", type=int, default=1, help="accepted for parity with `run`")
    p.add_argument("--warmup", type=int, default=2, help="warm-up iterations to drop")
    p.add_argument("--csv", default=None, help="write the sweep CSV (+ PNG alongside)")
    p.add_argument("--fig", default=None, help="write the sweep figure here")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TopologyError, ValueError) as exc:
        return _die(str(exc))
    except FileNotFoundError as exc:
        return _die(f"{exc.filename}: no such file")
    except runtime.CollectiveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
