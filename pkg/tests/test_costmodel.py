import math

import pytest

from ringbox.costmodel import (
    allreduce_time,
    multiring_time,
    parameter_server_time,
    ring_reduction_time,
)


def test_ring_reduction_basic():
    # 3 phases of (1/(4*10) + 0.001) each
    est = ring_reduction_time(1.0, 4, 10.0, 0.001)
    assert est.total == pytest.approx(0.078, abs=1e-12)
    assert est.phases == 3


def test_ring_reduction_single_rank():
    est = ring_reduction_time(1.0, 1, 10.0, 0.001)
    assert est.total == 0.0
    assert est.phases == 0


def test_ring_reduction_pure_latency():
    est = ring_reduction_time(0.0, 8, 10.0, 0.002)
    assert est.total == pytest.approx(0.014, abs=1e-15)


def test_ring_reduction_validation():
    with pytest.raises(ValueError):
        ring_reduction_time(1.0, 4, 0.0, 0.0)
    with pytest.raises(ValueError):
        ring_reduction_time(1.0, 0, 10.0, 0.0)


def test_allreduce_doubles_reduction():
    est = allreduce_time(1.0, 4, 10.0, 0.001)
    assert est.total == pytest.approx(0.156, abs=1e-12)
    assert est.phases == 6


def test_allreduce_flat_256_ring():
    # single flat ring at the slowest link; the multi-ring exists to beat this
    est = allreduce_time(0.35, 256, 9.5, 0.0005)
    expect = 2 * 255 * (0.35 / (256 * 9.5) + 0.0005)
    assert est.total == pytest.approx(expect, rel=1e-15)
    assert est.total == pytest.approx(0.3284, abs=2e-4)


def test_multiring_cluster_decomposition():
    # oracle: per-dimension evaluation with explicit shrinking payloads
    dims = [(4, 20.0), (16, 10.0), (4, 9.5)]
    expect = 0.0
    shrink = 1
    for d, bw in dims:
        expect += 2 * (d - 1) * (0.35 / shrink / (d * bw) + 0.0005)
        shrink *= d
    est = multiring_time(0.35, dims, 0.0005)
    assert est.total == pytest.approx(expect, rel=1e-12)
    assert est.total == pytest.approx(0.0645, abs=5e-4)
    assert est.total < 0.100
    assert est.phases == 42
    assert est.bottleneck_bandwidth == 9.5


def test_multiring_single_dimension_equals_flat():
    for s, n, b, lat in [(1.0, 4, 10.0, 0.001), (0.35, 256, 9.5, 0.0005), (0.0, 7, 3.0, 0.1)]:
        assert multiring_time(s, [(n, b)], lat).total == allreduce_time(s, n, b, lat).total


def test_multiring_singleton_dimension_is_noop():
    with_one = multiring_time(1.0, [(1, 5.0), (4, 10.0)], 0.001)
    without = multiring_time(1.0, [(4, 10.0)], 0.001)
    assert with_one.total == without.total
    assert with_one.per_dimension[0].phases == 0
    assert with_one.per_dimension[0].seconds == 0.0


def test_multiring_per_dimension_latency():
    est = multiring_time(1.0, [(2, 10.0, 0.01), (2, 10.0, 0.02)], 0.0)
    assert est.total == pytest.approx(2 * (1 / 20 + 0.01) + 2 * (0.5 / 20 + 0.02), rel=1e-12)


def test_multiring_validation():
    with pytest.raises(ValueError):
        multiring_time(1.0, [])
    with pytest.raises(ValueError):
        multiring_time(1.0, [(4, 0.0)])
    with pytest.raises(ValueError):
        multiring_time(1.0, [(0, 10.0)])


def test_estimate_internal_consistency():
    est = multiring_time(0.7, [(4, 20.0), (8, 10.0)], 0.0003)
    assert est.total == pytest.approx(sum(d.seconds for d in est.per_dimension), rel=1e-15)
    assert est.phases == sum(d.phases for d in est.per_dimension)


def test_monotonicity():
    base = multiring_time(1.0, [(4, 10.0), (4, 8.0)], 0.001).total
    assert multiring_time(2.0, [(4, 10.0), (4, 8.0)], 0.001).total > base
    assert multiring_time(1.0, [(4, 10.0), (4, 8.0)], 0.002).total > base
    assert multiring_time(1.0, [(4, 20.0), (4, 8.0)], 0.001).total < base
    assert multiring_time(1.0, [(4, 10.0), (4, 16.0)], 0.001).total < base


def test_latency_tradeoff_reverses():
    # equal bandwidth, zero latency: the flat ring is bandwidth-optimal
    flat0 = allreduce_time(1.0, 16, 10.0, 0.0).total
    multi0 = multiring_time(1.0, [(4, 10.0), (4, 10.0)], 0.0).total
    assert flat0 <= multi0 + 1e-15
    # large latency: fewer phases win, ordering flips
    flat1 = allreduce_time(1.0, 16, 10.0, 0.05).total
    multi1 = multiring_time(1.0, [(4, 10.0), (4, 10.0)], 0.05).total
    assert multi1 < flat1


def test_parameter_server_cluster_numbers():
    est = parameter_server_time(0.35, 256, 10.0)
    assert 8.9 <= est.seconds <= 9.0
    assert est.gathered_gb == pytest.approx(89.6, rel=1e-12)


def test_parameter_server_single_rank():
    est = parameter_server_time(0.35, 1, 10.0)
    assert est.seconds == pytest.approx(0.035, rel=1e-12)


def test_parameter_server_validation():
    with pytest.raises(ValueError):
        parameter_server_time(0.35, 256, 0.0)
    with pytest.raises(ValueError):
        parameter_server_time(0.0, 256, 10.0)
