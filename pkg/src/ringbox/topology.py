"""Tree-shaped cluster network model: levels, nodes, uplinks, and routing.

The network is a rooted tree.  Devices (the rank-bearing endpoints) are
leaves, hosts and switches are interior nodes.  Every non-root node owns
exactly one uplink to its parent; the uplink belongs to a level (intra-host,
intra-rack, ...) that carries a characteristic bandwidth and a per-phase
latency.  Links are full duplex: each direction has the full bandwidth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

NODE_KINDS = ("device", "host", "switch")


class TopologyError(ValueError):
    """Raised for malformed or semantically invalid topology documents."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass(frozen=True)
class Level:
    id: str
    bandwidth_gbps: float  # gigabytes (1e9 bytes) per second, per direction
    latency_s: float


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    parent: str | None
    host_id: str | None = None  # for devices: the host they live on


@dataclass(frozen=True)
class Link:
    """Uplink from a child node to its parent."""

    child: str
    parent: str
    bandwidth_gbps: float
    level: str
    latency_s: float


@dataclass(frozen=True)
class Hop:
    """One directed traversal of a link while routing."""

    src: str
    dst: str
    link: Link

    @property
    def direction(self) -> tuple[str, str]:
        return (self.src, self.dst)


class Topology:
    """Immutable validated cluster tree; safe to share across threads."""

    def __init__(self, levels: list[Level], nodes: list[Node]):
        self.levels: tuple[Level, ...] = tuple(levels)
        self._level_by_id = {lv.id: lv for lv in self.levels}
        self.nodes: dict[str, Node] = {n.id: n for n in nodes}
        self._children: dict[str, list[str]] = {n.id: [] for n in nodes}
        self._uplink: dict[str, Link] = {}
        roots = []
        for n in nodes:
            if n.parent is None:
                roots.append(n.id)
            else:
                self._children[n.parent].append(n.id)
        if len(roots) != 1:
            raise TopologyError(f"expected exactly one root node, found {roots}")
        self.root = roots[0]

    def level(self, level_id: str) -> Level:
        return self._level_by_id[level_id]

    def _set_uplink(self, child: str, link: Link) -> None:
        self._uplink[child] = link

    def uplink(self, node_id: str) -> Link | None:
        return self._uplink.get(node_id)

    def children(self, node_id: str) -> list[str]:
        return self._children[node_id]

    def is_leaf(self, node_id: str) -> bool:
        return not self._children[node_id]

    def devices(self) -> list[str]:
        """All device ids in depth-first (file) order."""
        return [n for n in self.dfs_leaves() if self.nodes[n].kind == "device"]

    def dfs_leaves(self) -> list[str]:
        out: list[str] = []
        stack = [self.root]
        while stack:
            nid = stack.pop()
            kids = self._children[nid]
            if not kids:
                out.append(nid)
            else:
                stack.extend(reversed(kids))
        return out

    def _path_to_root(self, node_id: str) -> list[str]:
        path = [node_id]
        seen = {node_id}
        cur = self.nodes[node_id]
        while cur.parent is not None:
            if cur.parent in seen:
                raise TopologyError(f"cycle through node '{cur.id}'")
            path.append(cur.parent)
            seen.add(cur.parent)
            cur = self.nodes[cur.parent]
        return path

    def route(self, a: str, b: str) -> list[Hop]:
        """Unique tree path between two leaves, as directed link traversals."""
        for nid in (a, b):
            if nid not in self.nodes:
                raise TopologyError(f"unknown node '{nid}'")
            if not self.is_leaf(nid):
                raise TopologyError(f"route endpoints must be leaves, got '{nid}'")
        if a == b:
            raise TopologyError(f"route endpoints must differ, got '{a}' twice")
        up_a = self._path_to_root(a)
        up_b = self._path_to_root(b)
        in_b = set(up_b)
        lca = next(n for n in up_a if n in in_b)
        hops: list[Hop] = []
        for nid in up_a[: up_a.index(lca)]:
            link = self._uplink[nid]
            hops.append(Hop(src=nid, dst=link.parent, link=link))
        down = up_b[: up_b.index(lca)]
        for nid in reversed(down):
            link = self._uplink[nid]
            hops.append(Hop(src=link.parent, dst=nid, link=link))
        return hops

    def min_bandwidth(self, ring_order: list[str]) -> float:
        """Lowest link bandwidth crossed between consecutive ring members."""
        members = list(ring_order)
        if len(set(members)) < 2:
            raise TopologyError("ring needs at least 2 distinct devices")
        worst = float("inf")
        n = len(members)
        for i in range(n):
            a, b = members[i], members[(i + 1) % n]
            if a == b:
                continue
            for hop in self.route(a, b):
                worst = min(worst, hop.link.bandwidth_gbps)
        return worst

    def serialize(self) -> str:
        doc = {
            "levels": [
                {"id": lv.id, "bandwidth_gbps": lv.bandwidth_gbps, "latency_s": lv.latency_s}
                for lv in self.levels
            ],
            "nodes": [],
        }
        for n in self.nodes.values():
            entry: dict = {"id": n.id, "kind": n.kind}
            if n.parent is not None:
                entry["parent"] = n.parent
                entry["link_level"] = self._uplink[n.id].level
            doc["nodes"].append(entry)
        return json.dumps(doc, indent=2, sort_keys=False)


def _require_keys(obj: dict, required: set[str], optional: set[str], location: str) -> None:
    keys = set(obj)
    missing = required - keys
    if missing:
        raise TopologyError(f"missing keys {sorted(missing)}", location)
    unknown = keys - required - optional
    if unknown:
        raise TopologyError(f"unknown keys {sorted(unknown)}", location)


def parse_topology(document: str) -> Topology:
    """Parse and validate a topology JSON document.

    Raises TopologyError with a location string on syntax or semantic errors.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise TopologyError("top level must be an object")
    _require_keys(doc, {"levels", "nodes"}, set(), "top level")

    levels: list[Level] = []
    seen_levels: set[str] = set()
    for i, raw in enumerate(doc["levels"]):
        loc = f"levels[{i}]"
        if not isinstance(raw, dict):
            raise TopologyError("level must be an object", loc)
        _require_keys(raw, {"id", "bandwidth_gbps", "latency_s"}, set(), loc)
        lid = raw["id"]
        if lid in seen_levels:
            raise TopologyError(f"duplicate level id '{lid}'", loc)
        seen_levels.add(lid)
        bw = raw["bandwidth_gbps"]
        lat = raw["latency_s"]
        if not isinstance(bw, (int, float)) or bw <= 0:
            raise TopologyError(f"bandwidth must be > 0, got {bw!r}", loc)
        if not isinstance(lat, (int, float)) or lat < 0:
            raise TopologyError(f"latency must be >= 0, got {lat!r}", loc)
        levels.append(Level(id=lid, bandwidth_gbps=float(bw), latency_s=float(lat)))
    level_by_id = {lv.id: lv for lv in levels}

    raw_nodes = doc["nodes"]
    seen_nodes: set[str] = set()
    parsed: list[tuple[dict, str]] = []
    for i, raw in enumerate(raw_nodes):
        loc = f"nodes[{i}]"
        if not isinstance(raw, dict):
            raise TopologyError("node must be an object", loc)
        _require_keys(raw, {"id", "kind"}, {"parent", "link_level"}, loc)
        nid = raw["id"]
        if not isinstance(nid, str) or not nid:
            raise TopologyError(f"node id must be a non-empty string, got {nid!r}", loc)
        if nid in seen_nodes:
            raise TopologyError(f"duplicate node id '{nid}'", loc)
        seen_nodes.add(nid)
        if raw["kind"] not in NODE_KINDS:
            raise TopologyError(f"kind must be one of {NODE_KINDS}, got {raw['kind']!r}", loc)
        if ("parent" in raw) != ("link_level" in raw):
            raise TopologyError("'parent' and 'link_level' must appear together", loc)
        parsed.append((raw, loc))

    nodes: list[Node] = []
    by_id = {raw["id"]: raw for raw, _ in parsed}
    for raw, loc in parsed:
        parent = raw.get("parent")
        if parent is not None:
            if parent not in by_id:
                raise TopologyError(f"unknown parent '{parent}'", loc)
            if parent == raw["id"]:
                raise TopologyError("node cannot be its own parent", loc)
            if raw.get("link_level") not in level_by_id:
                raise TopologyError(f"unknown level '{raw.get('link_level')}'", loc)
        host_id = None
        if raw["kind"] == "device":
            if parent is None:
                raise TopologyError("device must have a host parent", loc)
            if by_id[parent]["kind"] != "host":
                raise TopologyError(
                    f"device parent '{parent}' is a {by_id[parent]['kind']}, not a host", loc
                )
            host_id = parent
        nodes.append(Node(id=raw["id"], kind=raw["kind"], parent=parent, host_id=host_id))

    topo = Topology(levels, nodes)
    for raw, loc in parsed:
        if raw.get("parent") is None:
            continue
        lv = level_by_id[raw["link_level"]]
        topo._set_uplink(
            raw["id"],
            Link(
                child=raw["id"],
                parent=raw["parent"],
                bandwidth_gbps=lv.bandwidth_gbps,
                level=lv.id,
                latency_s=lv.latency_s,
            ),
        )
    # reject cycles / disconnected parent chains
    for nid in topo.nodes:
        topo._path_to_root(nid)
    for raw, loc in parsed:
        if raw["kind"] == "device" and not topo.is_leaf(raw["id"]):
            raise TopologyError("device must be a leaf", loc)
    return topo


def load_topology(path: str) -> Topology:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_topology(fh.read())


def override_latency(t: Topology, latency_s: float) -> Topology:
    """Copy of the topology with every level's latency replaced."""
    doc = json.loads(t.serialize())
    for lv in doc["levels"]:
        lv["latency_s"] = latency_s
    return parse_topology(json.dumps(doc))


def build_tree(
    devices_per_host: int,
    hosts_per_rack: int = 1,
    racks: int = 1,
    bandwidths_gbps: tuple[float, ...] = (20.0,),
    latencies_s: tuple[float, ...] = (0.0,),
) -> Topology:
    """Construct a regular device/host/rack/director tree.

    Levels are given innermost first; one bandwidth/latency pair per tier
    actually present (host uplinks, rack uplinks).
    """
    tiers = 1 + (1 if hosts_per_rack > 1 or racks > 1 else 0) + (1 if racks > 1 else 0)
    if len(bandwidths_gbps) != tiers or len(latencies_s) != tiers:
        raise TopologyError(f"need {tiers} bandwidth/latency values for this geometry")
    level_names = ["intra-host", "intra-rack", "inter-rack"][:tiers]
    doc: dict = {
        "levels": [
            {"id": name, "bandwidth_gbps": bw, "latency_s": lat}
            for name, bw, lat in zip(level_names, bandwidths_gbps, latencies_s)
        ],
        "nodes": [],
    }
    nodes = doc["nodes"]
    if racks > 1:
        nodes.append({"id": "director", "kind": "switch"})
    for r in range(racks):
        if racks > 1:
            nodes.append(
                {"id": f"tor{r}", "kind": "switch", "parent": "director", "link_level": "inter-rack"}
            )
        elif hosts_per_rack > 1:
            nodes.append({"id": "tor0", "kind": "switch"})
        for h in range(hosts_per_rack):
            host = f"host{r * hosts_per_rack + h}"
            entry: dict = {"id": host, "kind": "host"}
            if hosts_per_rack > 1 or racks > 1:
                entry["parent"] = f"tor{r}"
                entry["link_level"] = "intra-rack"
            nodes.append(entry)
            for d in range(devices_per_host):
                nodes.append(
                    {
                        "id": f"{host}.gpu{d}",
                        "kind": "device",
                        "parent": host,
                        "link_level": "intra-host",
                    }
                )
    return parse_topology(json.dumps(doc))
