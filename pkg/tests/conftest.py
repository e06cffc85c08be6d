import collections

import pytest

from ringbox.topology import Topology, build_tree


@pytest.fixture
def host4() -> Topology:
    return build_tree(4, bandwidths_gbps=(20.0,), latencies_s=(0.0005,))


@pytest.fixture
def two_switch() -> Topology:
    """Four devices under two hosts sharing a top switch (the tree-ring demo)."""
    return build_tree(2, 2, 1, (10.0, 10.0), (0.001, 0.001))


@pytest.fixture(scope="session")
def cluster() -> Topology:
    """4 GPUs per host, 16 hosts per rack, 4 racks; 20/10/9.5 GB/s levels."""
    return build_tree(4, 16, 4, (20.0, 10.0, 9.5), (0.0005, 0.0005, 0.0005))


def bfs_path(t: Topology, a: str, b: str) -> list[str]:
    """Independent shortest-path oracle over the undirected node graph."""
    adj = collections.defaultdict(list)
    for node in t.nodes.values():
        if node.parent is not None:
            adj[node.id].append(node.parent)
            adj[node.parent].append(node.id)
    prev = {a: None}
    queue = collections.deque([a])
    while queue:
        cur = queue.popleft()
        if cur == b:
            break
        for nxt in adj[cur]:
            if nxt not in prev:
                prev[nxt] = cur
                queue.append(nxt)
    path = [b]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]
