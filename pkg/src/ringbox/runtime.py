"""Multi-process allreduce executor over local TCP sockets.

One worker process per rank.  A coordinator socket handles rendezvous:
workers connect, receive the plan and the peer address map, validate that
everyone agrees on payload shape, then open direct peer connections and
execute the schedule with real data movement and elementwise reduction.

Wire format per data transfer: little-endian header
`{magic: u32, phase: u32, chunk: u32, byte_length: u64}` followed by the
payload bytes.  Peer connections begin with an identification word and a
plan-hash handshake so shape mismatches are caught before any data flows.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing as mp
import os
import select
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .multiring import Grid, Plan, build_grid, multiring_schedule, ring_partner_pairs
from .ring import ADD, Schedule, chunk_bounds

MAGIC = 0x52424F58  # "RBOX"
FRAME_HEADER = struct.Struct("<IIIQ")  # magic, phase, chunk, byte_length
PEER_HELLO = struct.Struct("<II")  # magic, rank
PEER_HANDSHAKE = struct.Struct("<IIQ")  # magic, rank, plan hash

DTYPES = {"f32": np.float32, "f64": np.float64, "i64": np.int64}

DEFAULT_TIMEOUT_S = 30.0


class CollectiveError(RuntimeError):
    """A collective failed; carries the offending rank when known."""

    def __init__(self, message: str, rank: int | None = None, phase: int | None = None):
        self.rank = rank
        self.phase = phase
        super().__init__(message)


@dataclass
class PlacedBuffer:
    """A contiguous numeric buffer plus placement metadata.

    The buffer length and the metadata are fixed at creation; only the
    element values change.  Memory kinds are emulated: no real accelerator
    memory is touched.
    """

    data: np.ndarray
    host: str = "localhost"
    device: str = "cpu0"
    memory: str = "emulated-host"

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data)

    def __len__(self) -> int:
        return len(self.data)


def assign(dst: PlacedBuffer, src: PlacedBuffer) -> PlacedBuffer:
    """Copy src's contents into dst; metadata and src are unchanged."""
    if len(dst.data) != len(src.data):
        raise ValueError(f"length mismatch: {len(dst.data)} vs {len(src.data)}")
    if dst.data.dtype != src.data.dtype:
        raise ValueError(f"dtype mismatch: {dst.data.dtype} vs {src.data.dtype}")
    dst.data[...] = src.data
    return dst


@dataclass(frozen=True)
class Workload:
    """What each rank should do: one allreduce per entry of `lengths`."""

    lengths: tuple[int, ...]
    dtype: str = "i64"
    seed: int = 0
    crash_rank: int | None = None  # fault injection for tests
    crash_phase: int | None = None
    length_overrides: dict | None = None  # rank -> length, for mismatch tests


def generate_input(workload: Workload, iteration: int, rank: int, length: int) -> np.ndarray:
    """Deterministic per-(iteration, rank) input vector; tests regenerate it."""
    rng = np.random.default_rng(workload.seed * 100003 + iteration * 1009 + rank)
    dt = DTYPES[workload.dtype]
    if workload.dtype == "i64":
        return rng.integers(-1000, 1001, size=length, dtype=np.int64)
    return rng.standard_normal(length).astype(dt)


@dataclass
class RankResult:
    rank: int
    times: list[float]
    digests: list[str]
    bytes_sent: int


@dataclass
class LaunchReport:
    ranks: int
    dims: tuple[int, ...]
    results: dict[int, RankResult] = field(default_factory=dict)
    error: str | None = None
    failed_rank: int | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def plan_fingerprint(dims: tuple[int, ...], dtype: str, lengths: tuple[int, ...]) -> int:
    blob = json.dumps([list(dims), dtype, list(lengths)]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        data = sock.recv(min(n, 1 << 20))
        if not data:
            raise ConnectionError("peer closed the connection")
        chunks.append(data)
        n -= len(data)
    return b"".join(chunks)


def _send_json(sock: socket.socket, obj: dict) -> None:
    sock.sendall(json.dumps(obj).encode() + b"\n")


class _LineReader:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buf = b""

    def readline(self) -> dict:
        while b"\n" not in self.buf:
            data = self.sock.recv(65536)
            if not data:
                raise ConnectionError("connection closed")
            self.buf += data
        line, self.buf = self.buf.split(b"\n", 1)
        return json.loads(line)


class RankContext:
    """Per-process state: grid position, live peer sockets, traffic counter."""

    def __init__(self, rank: int, grid: Grid, peers: dict[int, socket.socket], plan_hash: int):
        self.rank = rank
        self.grid = grid
        self.peers = peers
        self.plan_hash = plan_hash
        self.bytes_sent = 0
        self._schedules: dict[int, Schedule] = {}

    @property
    def coords(self) -> tuple[int, ...]:
        return self.grid.coords(self.rank)

    def schedule_for(self, element_count: int) -> Schedule:
        if element_count not in self._schedules:
            self._schedules[element_count] = multiring_schedule(self.grid, element_count)
        return self._schedules[element_count]

    def close(self) -> None:
        for sock in self.peers.values():
            try:
                sock.close()
            except OSError:
                pass


def owned_region(grid: Grid, rank: int, element_count: int) -> tuple[int, int]:
    """Element range this rank owns after a full multi-ring reduce-scatter."""
    off, length = 0, element_count
    coords = grid.coords(rank)
    for c, d in zip(coords, grid.dims):
        if d == 1:
            continue
        sub_off, sub_len = chunk_bounds(length, d, (c + 1) % d)
        off, length = off + sub_off, sub_len
    return off, length


def _run_phases(ctx: RankContext, buf: np.ndarray, phases, phase_base: int = 0) -> None:
    itemsize = buf.dtype.itemsize
    for offset, phase in enumerate(phases):
        phase_idx = phase_base + offset
        my_send = None
        my_recv = None
        for tr in phase.transfers:
            if tr.src == ctx.rank:
                my_send = tr
            if tr.dst == ctx.rank:
                my_recv = tr

        err: list[Exception] = []

        def do_send(tr=my_send, idx=phase_idx):
            try:
                payload = buf[tr.offset : tr.offset + tr.length].tobytes()
                header = FRAME_HEADER.pack(MAGIC, idx, tr.chunk_index, len(payload))
                ctx.peers[tr.dst].sendall(header + payload)
                ctx.bytes_sent += len(payload)
            except Exception as exc:  # surfaced after join
                err.append(exc)

        sender = None
        if my_send is not None:
            sender = threading.Thread(target=do_send)
            sender.start()
        if my_recv is not None:
            try:
                raw = _recv_exact(ctx.peers[my_recv.src], FRAME_HEADER.size)
                magic, phase_no, chunk, nbytes = FRAME_HEADER.unpack(raw)
                if magic != MAGIC:
                    raise CollectiveError(f"bad frame magic {magic:#x}", rank=ctx.rank)
                if phase_no != phase_idx or chunk != my_recv.chunk_index:
                    raise CollectiveError(
                        f"out-of-order frame: got phase {phase_no} chunk {chunk}, "
                        f"expected phase {phase_idx} chunk {my_recv.chunk_index}",
                        rank=ctx.rank,
                        phase=phase_idx,
                    )
                expected = my_recv.length * itemsize
                if nbytes != expected:
                    raise CollectiveError(
                        f"frame length {nbytes} != expected {expected}",
                        rank=ctx.rank,
                        phase=phase_idx,
                    )
                payload = np.frombuffer(_recv_exact(ctx.peers[my_recv.src], nbytes), dtype=buf.dtype)
                view = buf[my_recv.offset : my_recv.offset + my_recv.length]
                if my_recv.combine == ADD:
                    view += payload
                else:
                    view[:] = payload
            except (ConnectionError, OSError) as exc:
                if sender is not None:
                    sender.join()
                raise CollectiveError(
                    f"lost peer rank {my_recv.src} during phase {phase_idx}: {exc}",
                    rank=my_recv.src,
                    phase=phase_idx,
                ) from exc
        if sender is not None:
            sender.join()
            if err:
                raise CollectiveError(
                    f"send to rank {my_send.dst} failed during phase {phase_idx}: {err[0]}",
                    rank=my_send.dst,
                    phase=phase_idx,
                )


def _split_point(schedule: Schedule) -> int:
    # reduce-scatter phases come first; allgather phases carry REPLACE combines
    for i, phase in enumerate(schedule.phases):
        if phase.transfers and phase.transfers[0].combine != ADD:
            return i
    return len(schedule.phases)


def reduce_scatter(ctx: RankContext, obj: PlacedBuffer) -> np.ndarray:
    """Run the reduce-scatter half; returns a view of this rank's owned chunk."""
    sched = ctx.schedule_for(len(obj))
    split = _split_point(sched)
    _run_phases(ctx, obj.data, sched.phases[:split])
    off, length = owned_region(ctx.grid, ctx.rank, len(obj))
    return obj.data[off : off + length]


def allgather(ctx: RankContext, obj: PlacedBuffer) -> PlacedBuffer:
    """Run the allgather half; afterwards every rank holds the full vector."""
    sched = ctx.schedule_for(len(obj))
    split = _split_point(sched)
    _run_phases(ctx, obj.data, sched.phases[split:], phase_base=split)
    return obj


def allreduce(ctx: RankContext, obj: PlacedBuffer) -> PlacedBuffer:
    reduce_scatter(ctx, obj)
    return allgather(ctx, obj)


def _worker_entry(rank: int, coord_host: str, coord_port: int) -> None:
    try:
        _worker_main(rank, coord_host, coord_port)
    except Exception:
        os._exit(1)


def _worker_main(rank: int, coord_host: str, coord_port: int) -> None:
    coord = socket.create_connection((coord_host, coord_port), timeout=DEFAULT_TIMEOUT_S)
    coord.settimeout(DEFAULT_TIMEOUT_S)
    reader = _LineReader(coord)

    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind(("127.0.0.1", 0))
    listener.listen(64)
    _send_json(coord, {"type": "hello", "rank": rank, "port": listener.getsockname()[1]})

    config = reader.readline()
    if config.get("type") != "config":
        raise CollectiveError(f"unexpected coordinator message {config}")
    dims = tuple(config["dims"])
    grid = build_grid(int(np.prod(dims)) if dims else 1, dims)
    workload = Workload(
        lengths=tuple(config["lengths"]),
        dtype=config["dtype"],
        seed=config["seed"],
        crash_rank=config.get("crash_rank"),
        crash_phase=config.get("crash_phase"),
    )
    # a rank with an override advertises its own (wrong) shape
    my_lengths = workload.lengths
    override = (config.get("length_overrides") or {}).get(str(rank))
    if override is not None:
        my_lengths = tuple(override for _ in workload.lengths)
    fingerprint = plan_fingerprint(dims, workload.dtype, my_lengths)
    _send_json(
        coord,
        {"type": "ready", "rank": rank, "lengths": list(my_lengths), "hash": fingerprint},
    )

    go = reader.readline()
    if go.get("type") == "abort":
        _send_json(coord, {"type": "error", "rank": rank, "message": go["error"]})
        coord.close()
        raise CollectiveError(go["error"], rank=rank)
    peers_addr = {int(r): tuple(addr) for r, addr in go["peers"].items()}

    partners = sorted(
        {a if b == rank else b for a, b in ring_partner_pairs(grid) if rank in (a, b)}
    )
    peers: dict[int, socket.socket] = {}
    for other in partners:
        if other < rank:
            continue  # the lower rank dials
        host, port = peers_addr[other]
        sock = socket.create_connection((host, port), timeout=DEFAULT_TIMEOUT_S)
        sock.sendall(PEER_HELLO.pack(MAGIC, rank))
        peers[other] = sock
    expected_inbound = [p for p in partners if p < rank]
    listener.settimeout(DEFAULT_TIMEOUT_S)
    while expected_inbound:
        sock, _ = listener.accept()
        magic, other = PEER_HELLO.unpack(_recv_exact(sock, PEER_HELLO.size))
        if magic != MAGIC or other not in expected_inbound:
            sock.close()
            raise CollectiveError(f"unexpected inbound peer {other}", rank=rank)
        expected_inbound.remove(other)
        peers[other] = sock
    listener.close()
    for sock in peers.values():
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    ctx = RankContext(rank, grid, peers, fingerprint)
    try:
        for other, sock in peers.items():
            sock.sendall(PEER_HANDSHAKE.pack(MAGIC, rank, fingerprint))
        for other, sock in peers.items():
            magic, other_rank, other_hash = PEER_HANDSHAKE.unpack(
                _recv_exact(sock, PEER_HANDSHAKE.size)
            )
            if magic != MAGIC or other_rank != other:
                raise CollectiveError(f"peer identity mismatch on rank {other}", rank=rank)
            if other_hash != fingerprint:
                raise CollectiveError(
                    f"plan hash mismatch with rank {other}: shapes disagree", rank=other
                )

        times: list[float] = []
        digests: list[str] = []
        for it, length in enumerate(workload.lengths):
            data = generate_input(workload, it, rank, length)
            obj = PlacedBuffer(data=data, host="localhost", device=f"rank{rank}")
            if workload.crash_rank == rank and it == 0:
                _run_crashing(ctx, obj, workload.crash_phase or 0)
            t0 = time.perf_counter()
            allreduce(ctx, obj)
            times.append(time.perf_counter() - t0)
            digests.append(hashlib.sha256(obj.data.tobytes()).hexdigest())
        _send_json(
            coord,
            {
                "type": "result",
                "rank": rank,
                "times": times,
                "digests": digests,
                "bytes_sent": ctx.bytes_sent,
            },
        )
    except CollectiveError as exc:
        try:
            _send_json(
                coord,
                {
                    "type": "error",
                    "rank": rank,
                    "phase": exc.phase,
                    "failed_rank": exc.rank if exc.rank is not None else rank,
                    "message": str(exc),
                },
            )
        except OSError:
            pass
        os._exit(1)
    finally:
        ctx.close()
        coord.close()


def _run_crashing(ctx: RankContext, obj: PlacedBuffer, crash_phase: int) -> None:
    sched = ctx.schedule_for(len(obj))
    _run_phases(ctx, obj.data, sched.phases[:crash_phase])
    os._exit(3)


def launch(
    ranks: int,
    plan: Plan | tuple[int, ...],
    workload: Workload,
    rendezvous: tuple[str, int] | None = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> LaunchReport:
    """Spawn one process per rank and run the workload's allreduces.

    `plan` may be a full Plan or just the grid dimension sizes.  Returns a
    report with per-rank wall times, result digests, and traffic counters;
    on any rank failure the report carries the error and the rank.
    """
    dims = plan.grid.dims if isinstance(plan, Plan) else tuple(plan)
    build_grid(ranks, dims)  # validates the product
    report = LaunchReport(ranks=ranks, dims=dims)

    host, port = rendezvous if rendezvous is not None else ("127.0.0.1", 0)
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind((host, port))
    listener.listen(ranks)
    host, port = listener.getsockname()

    ctx = mp.get_context("fork")
    procs = {
        rank: ctx.Process(target=_worker_entry, args=(rank, host, port), daemon=True)
        for rank in range(ranks)
    }
    for p in procs.values():
        p.start()

    conns: dict[int, socket.socket] = {}
    readers: dict[int, _LineReader] = {}
    deadline = time.monotonic() + timeout_s

    def cleanup() -> None:
        for p in procs.values():
            if p.is_alive():
                p.terminate()
        for p in procs.values():
            p.join(timeout=5)
        for sock in conns.values():
            try:
                sock.close()
            except OSError:
                pass
        listener.close()

    def fail(message: str, rank: int | None = None) -> LaunchReport:
        report.error = message
        report.failed_rank = rank
        cleanup()
        return report

    def dead_rank() -> int | None:
        for rank, p in procs.items():
            if not p.is_alive() and p.exitcode not in (0, None) and rank not in report.results:
                return rank
        return None

    try:
        # rendezvous: collect hellos (rank + peer listen port)
        listener.settimeout(0.2)
        ports: dict[int, int] = {}
        while len(conns) < ranks:
            if time.monotonic() > deadline:
                return fail(f"rendezvous timeout: {len(conns)}/{ranks} workers connected")
            rank = dead_rank()
            if rank is not None:
                return fail(f"worker rank {rank} died during rendezvous", rank)
            try:
                sock, _ = listener.accept()
            except socket.timeout:
                continue
            sock.settimeout(timeout_s)
            reader = _LineReader(sock)
            hello = reader.readline()
            if hello.get("type") != "hello":
                return fail(f"unexpected rendezvous message {hello}")
            conns[hello["rank"]] = sock
            readers[hello["rank"]] = reader
            ports[hello["rank"]] = hello["port"]

        config = {
            "type": "config",
            "dims": list(dims),
            "lengths": list(workload.lengths),
            "dtype": workload.dtype,
            "seed": workload.seed,
            "crash_rank": workload.crash_rank,
            "crash_phase": workload.crash_phase,
            "length_overrides": {
                str(k): v for k, v in (workload.length_overrides or {}).items()
            },
        }
        for sock in conns.values():
            _send_json(sock, config)

        # shape agreement check before any peer traffic
        readies = {rank: readers[rank].readline() for rank in sorted(conns)}
        shapes = {rank: (tuple(msg["lengths"]), msg["hash"]) for rank, msg in readies.items()}
        reference = shapes[0]
        mismatched = [rank for rank, shape in shapes.items() if shape != reference]
        if mismatched:
            detail = ", ".join(f"rank {r} advertises lengths {shapes[r][0]}" for r in mismatched)
            for sock in conns.values():
                _send_json(sock, {"type": "abort", "error": f"length mismatch: {detail}"})
            errors = {}
            for rank in sorted(conns):
                try:
                    errors[rank] = readers[rank].readline()
                except (ConnectionError, OSError):
                    pass
            return fail(f"length mismatch: {detail}", mismatched[0])

        go = {"type": "go", "peers": {str(r): ["127.0.0.1", ports[r]] for r in ports}}
        for sock in conns.values():
            _send_json(sock, go)

        # collect results, watching worker liveness
        pending = set(range(ranks))
        while pending:
            if time.monotonic() > deadline:
                return fail(f"timeout waiting for ranks {sorted(pending)}")
            rank = dead_rank()
            if rank is not None and rank in pending:
                return fail(f"worker rank {rank} crashed before reporting a result", rank)
            readable, _, _ = select.select([conns[r] for r in pending], [], [], 0.2)
            for sock in readable:
                rank = next(r for r in pending if conns[r] is sock)
                try:
                    msg = readers[rank].readline()
                except (ConnectionError, OSError):
                    continue  # liveness check will classify this
                if msg["type"] == "result":
                    report.results[rank] = RankResult(
                        rank=rank,
                        times=msg["times"],
                        digests=msg["digests"],
                        bytes_sent=msg["bytes_sent"],
                    )
                    pending.discard(rank)
                elif msg["type"] == "error":
                    culprit = msg.get("failed_rank", rank)
                    return fail(
                        f"rank {culprit} failed: {msg['message']}"
                        + (f" (phase {msg['phase']})" if msg.get("phase") is not None else ""),
                        culprit,
                    )
    except (ConnectionError, OSError) as exc:
        return fail(f"coordinator I/O failure: {exc}")

    cleanup()
    return report
