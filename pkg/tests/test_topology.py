import json

import pytest

from ringbox.topology import TopologyError, build_tree, override_latency, parse_topology

from conftest import bfs_path


def doc_with(nodes, levels=None):
    levels = levels or [{"id": "l0", "bandwidth_gbps": 10.0, "latency_s": 0.0}]
    return json.dumps({"levels": levels, "nodes": nodes})


class TestParsing:
    def test_single_host_four_devices(self, host4):
        assert len(host4.devices()) == 4
        assert len(host4.levels) == 1
        assert host4.levels[0].bandwidth_gbps == 20.0

    def test_full_scale_cluster(self, cluster):
        assert len(cluster.devices()) == 256
        assert [lv.bandwidth_gbps for lv in cluster.levels] == [20.0, 10.0, 9.5]

    def test_duplicate_node_id_rejected(self):
        doc = doc_with(
            [
                {"id": "h", "kind": "host"},
                {"id": "d", "kind": "device", "parent": "h", "link_level": "l0"},
                {"id": "d", "kind": "device", "parent": "h", "link_level": "l0"},
            ]
        )
        with pytest.raises(TopologyError, match="duplicate node id 'd'"):
            parse_topology(doc)

    def test_malformed_json(self):
        with pytest.raises(TopologyError, match="invalid JSON"):
            parse_topology("{not json")

    def test_unknown_keys_rejected(self):
        doc = doc_with([{"id": "h", "kind": "host", "color": "blue"}])
        with pytest.raises(TopologyError, match="unknown keys"):
            parse_topology(doc)

    def test_unknown_parent(self):
        doc = doc_with([{"id": "d", "kind": "device", "parent": "nope", "link_level": "l0"}])
        with pytest.raises(TopologyError, match="unknown parent"):
            parse_topology(doc)

    def test_device_parent_must_be_host(self):
        doc = doc_with(
            [
                {"id": "s", "kind": "switch"},
                {"id": "d", "kind": "device", "parent": "s", "link_level": "l0"},
            ]
        )
        with pytest.raises(TopologyError, match="not a host"):
            parse_topology(doc)

    def test_cycle_rejected(self):
        doc = doc_with(
            [
                {"id": "a", "kind": "switch", "parent": "b", "link_level": "l0"},
                {"id": "b", "kind": "switch", "parent": "a", "link_level": "l0"},
                {"id": "r", "kind": "host"},
            ]
        )
        with pytest.raises(TopologyError, match="cycle"):
            parse_topology(doc)

    def test_two_roots_rejected(self):
        doc = doc_with([{"id": "a", "kind": "host"}, {"id": "b", "kind": "host"}])
        with pytest.raises(TopologyError, match="exactly one root"):
            parse_topology(doc)

    def test_nonpositive_bandwidth_rejected(self):
        doc = doc_with(
            [{"id": "h", "kind": "host"}],
            levels=[{"id": "l0", "bandwidth_gbps": 0, "latency_s": 0.0}],
        )
        with pytest.raises(TopologyError, match="bandwidth must be > 0"):
            parse_topology(doc)

    def test_roundtrip(self, cluster):
        text = cluster.serialize()
        again = parse_topology(text)
        assert again.serialize() == text
        assert again.devices() == cluster.devices()

    def test_override_latency(self, host4):
        t = override_latency(host4, 0.123)
        assert all(lv.latency_s == 0.123 for lv in t.levels)


class TestRouting:
    def test_same_host_path_length_two(self, host4):
        hops = host4.route("host0.gpu0", "host0.gpu3")
        assert len(hops) == 2
        assert hops[0].direction == ("host0.gpu0", "host0")
        assert hops[1].direction == ("host0", "host0.gpu3")

    def test_cross_rack_path_length_six(self, cluster):
        # oracle: breadth-first search on the undirected tree
        a, b = "host0.gpu0", "host63.gpu3"
        hops = cluster.route(a, b)
        path = bfs_path(cluster, a, b)
        assert len(hops) == len(path) - 1 == 6

    def test_route_matches_bfs_everywhere(self, cluster):
        devices = cluster.devices()
        for a, b in [(devices[0], devices[5]), (devices[3], devices[200]), (devices[64], devices[65])]:
            hops = cluster.route(a, b)
            path = bfs_path(cluster, a, b)
            assert [h.src for h in hops] + [b] == path

    def test_route_to_self_rejected(self, host4):
        with pytest.raises(TopologyError, match="must differ"):
            host4.route("host0.gpu0", "host0.gpu0")

    def test_unknown_node(self, host4):
        with pytest.raises(TopologyError, match="unknown node"):
            host4.route("host0.gpu0", "ghost")

    def test_route_reversal(self, cluster):
        a, b = "host0.gpu1", "host17.gpu2"
        fwd = cluster.route(a, b)
        rev = cluster.route(b, a)
        assert [h.direction for h in fwd] == [(d, s) for s, d in reversed([h.direction for h in rev])]


class TestMinBandwidth:
    def test_intra_host_ring(self, cluster):
        ring = [f"host0.gpu{i}" for i in range(4)]
        assert cluster.min_bandwidth(ring) == 20.0

    def test_cross_rack_ring(self, cluster):
        ring = ["host0.gpu0", "host16.gpu0", "host32.gpu0", "host48.gpu0"]
        assert cluster.min_bandwidth(ring) == 9.5

    def test_two_device_single_link(self, two_switch):
        ring = ["host0.gpu0", "host0.gpu1"]
        assert two_switch.min_bandwidth(ring) == 10.0

    def test_rotation_invariance(self, cluster):
        ring = ["host0.gpu0", "host0.gpu1", "host1.gpu0", "host16.gpu2"]
        base = cluster.min_bandwidth(ring)
        for shift in range(1, len(ring)):
            assert cluster.min_bandwidth(ring[shift:] + ring[:shift]) == base

    def test_needs_two_distinct(self, host4):
        with pytest.raises(TopologyError, match="at least 2 distinct"):
            host4.min_bandwidth(["host0.gpu0"])


def test_build_tree_geometry_validation():
    with pytest.raises(TopologyError, match="bandwidth/latency values"):
        build_tree(4, 16, 4, (20.0,), (0.0,))
