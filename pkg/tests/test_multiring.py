import itertools
import json

import numpy as np
import pytest

from ringbox.costmodel import allreduce_time
from ringbox.multiring import (
    Grid,
    Plan,
    build_grid,
    evaluate_decomposition,
    factorizations,
    multiring_schedule,
    plan,
    ring_partner_pairs,
)
from ringbox.ring import order_ranks_on_tree, replay
from ringbox.topology import build_tree


def brute_force_factorizations(n, max_dims):
    """Oracle: filter all tuples over divisors of n."""
    divisors = [d for d in range(2, n + 1) if n % d == 0]
    found = {(n,)}
    for k in range(1, max_dims + 1):
        for tup in itertools.product(divisors, repeat=k):
            prod = 1
            for d in tup:
                prod *= d
            if prod == n:
                found.add(tup)
    return sorted(found)


class TestFactorizations:
    def test_eight(self):
        assert factorizations(8, 3) == [(2, 2, 2), (2, 4), (4, 2), (8,)]

    def test_prime(self):
        assert factorizations(7, 4) == [(7,)]

    def test_one(self):
        assert factorizations(1, 3) == [(1,)]

    @pytest.mark.parametrize("n", [2, 6, 12, 16, 36, 60])
    @pytest.mark.parametrize("max_dims", [1, 2, 3, 4])
    def test_against_brute_force(self, n, max_dims):
        assert factorizations(n, max_dims) == brute_force_factorizations(n, max_dims)


class TestGrid:
    def test_two_by_two_coordinates(self):
        g = build_grid(4, (2, 2))
        assert [g.coords(r) for r in range(4)] == [(0, 0), (1, 0), (0, 1), (1, 1)]

    def test_flat_is_identity(self):
        g = build_grid(5, (5,))
        assert [g.coords(r) for r in range(5)] == [(0,), (1,), (2,), (3,), (4,)]

    def test_singleton_dimension(self):
        g = build_grid(4, (1, 4))
        assert all(g.coords(r)[0] == 0 for r in range(4))

    def test_bijective(self):
        for dims in [(2, 3, 4), (6,), (1, 2, 1, 3)]:
            g = Grid(dims=dims)
            ranks = {g.rank_of(g.coords(r)) for r in range(g.size)}
            assert ranks == set(range(g.size))

    def test_size_mismatch(self):
        with pytest.raises(ValueError, match="product"):
            build_grid(5, (2, 2))


class TestMultiringSchedule:
    def test_phase_count_law(self):
        for dims in [(2, 2), (4,), (2, 2, 2), (3, 4), (1, 4), (2, 1, 3)]:
            g = Grid(dims=dims)
            s = multiring_schedule(g, 4 * g.size)
            assert len(s.phases) == 2 * sum(d - 1 for d in dims)

    def test_flat_grid_matches_single_ring(self):
        from ringbox.ring import RingOrder, allreduce_schedule

        g = Grid(dims=(5,))
        flat = allreduce_schedule(RingOrder(devices=tuple("abcde")), 20)
        assert multiring_schedule(g, 20).phases == flat.phases

    def test_singleton_dimension_dropped(self):
        assert multiring_schedule(Grid(dims=(1, 4)), 12).phases == multiring_schedule(
            Grid(dims=(4,)), 12
        ).phases

    def test_replay_all_decompositions(self):
        # oracle: serial numpy sum, exact over integers
        rng = np.random.default_rng(1)
        for n in (1, 2, 4, 6, 8, 12, 16):
            for dims in factorizations(n, 3):
                for count in (0, 1, 17, 2 * n):
                    g = build_grid(n, dims)
                    bufs = [rng.integers(-10**9, 10**9, count) for _ in range(n)]
                    expect = np.sum(bufs, axis=0) if count else np.zeros(0, dtype=np.int64)
                    for got in replay(multiring_schedule(g, count), bufs):
                        assert np.array_equal(got, expect), (n, dims, count)

    def test_partner_pairs(self):
        pairs = ring_partner_pairs(Grid(dims=(2, 2)))
        assert pairs == {(0, 1), (2, 3), (0, 2), (1, 3)}


class TestPlanner:
    def test_single_host_zero_latency_picks_flat(self, host4):
        p = plan(host4, host4.devices(), 0.001, latency_s=0.0)
        assert p.grid.dims == (4,)

    def test_positive_latency_prefers_fewer_phases(self, host4):
        # equal bandwidth everywhere: deeper factorization trades nothing on
        # bandwidth and saves phases, so it wins once latency is positive
        p = plan(host4, host4.devices(), 0.001, latency_s=0.001)
        assert p.grid.dims == (2, 2)
        assert sum(d - 1 for d in p.grid.dims) < 3

    def test_prime_over_two_hosts_flat_at_worst_bandwidth(self):
        t = build_tree(4, 2, 1, (20.0, 10.0), (0.0, 0.0))
        devices = t.devices()[:7]
        p = plan(t, devices, 0.01, latency_s=0.0)
        assert p.grid.dims == (7,)
        assert p.decomposition.dims[0].bandwidth_gbps == 10.0

    def test_cluster_dimension_binding(self, cluster):
        p = plan(cluster, cluster.devices(), 0.35, dims=(4, 16, 4))
        specs = p.decomposition.dims
        assert [s.level for s in specs] == ["intra-host", "intra-rack", "inter-rack"]
        assert [s.bandwidth_gbps for s in specs] == [20.0, 10.0, 9.5]
        assert p.estimate.total == pytest.approx(0.06452, abs=2e-4)

    def test_chosen_plan_never_worse_than_flat(self, cluster):
        chosen = plan(cluster, cluster.devices(), 0.35, max_dims=3)
        flat = plan(cluster, cluster.devices(), 0.35, dims=(256,))
        assert chosen.estimate.total <= flat.estimate.total
        assert chosen.estimate.phases == 2 * sum(d - 1 for d in chosen.grid.dims)

    def test_flat_vs_deep_phase_counts(self, cluster):
        flat = plan(cluster, cluster.devices(), 0.35, dims=(256,))
        deep = plan(cluster, cluster.devices(), 0.35, dims=(4, 16, 4))
        assert flat.estimate.phases == 510
        assert deep.estimate.phases == 42

    def test_scale_invariance_of_choice(self):
        t1 = build_tree(2, 4, 1, (20.0, 10.0), (0.0005, 0.0005))
        t2 = build_tree(2, 4, 1, (60.0, 30.0), (0.0005, 0.0005))
        p1 = plan(t1, t1.devices(), 0.1, max_dims=3)
        p2 = plan(t2, t2.devices(), 0.3, max_dims=3)
        assert p1.grid.dims == p2.grid.dims

    def test_empty_devices_rejected(self, host4):
        with pytest.raises(ValueError, match="must not be empty"):
            plan(host4, [], 0.1)

    def test_element_count_divides_evenly(self, host4):
        p = plan(host4, host4.devices(), 0.001)
        assert p.element_count % p.grid.size == 0

    def test_plan_json_roundtrip(self, host4):
        p = plan(host4, host4.devices(), 0.001, latency_s=0.0005)
        again = Plan.from_json(p.to_json())
        assert again.grid.dims == p.grid.dims
        assert again.order.devices == p.order.devices
        assert again.element_count == p.element_count
        assert again.estimate.total == pytest.approx(p.estimate.total, rel=1e-12)
        assert again.schedule == p.schedule
        # machine-readable output is deterministic
        assert json.loads(p.to_json()) == json.loads(again.to_json())


def test_evaluate_uses_worst_crossed_link():
    t = build_tree(2, 2, 1, (20.0, 10.0), (0.0, 0.001))
    order = order_ranks_on_tree(t, t.devices())
    decomp, est = evaluate_decomposition(t, order, (2, 2), 0.01)
    # outer dimension crosses the switch: worst link 10, latency from that level
    assert decomp.dims[0].bandwidth_gbps == 20.0
    assert decomp.dims[1].bandwidth_gbps == 10.0
    assert decomp.dims[1].latency_s == 0.001


def test_multiring_estimate_matches_costmodel_flat():
    t = build_tree(8, bandwidths_gbps=(10.0,), latencies_s=(0.001,))
    p = plan(t, t.devices(), 0.01, dims=(8,))
    eff_gb = p.element_count * p.bytes_per_element / 1e9
    assert p.estimate.total == pytest.approx(
        allreduce_time(eff_gb, 8, 10.0, 0.001).total, rel=1e-12
    )
