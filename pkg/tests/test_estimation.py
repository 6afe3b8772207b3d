import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avaas.detection import Detection, Observation, default_sensor_profile
from avaas.estimation import (
    EstimationError,
    PointEstimate,
    TrafficState,
    aggregate_interval,
    combine_sources,
    estimate_link_states,
    ground_truth_states,
    mo_point_estimate,
    po_point_estimate,
    scope_rollup,
)
from avaas.microsim import AggregationConfig, DemandSpec, Flow, GroundTruthState, constant_speed_log, simulate
from avaas.network import builtin_network
from avaas.observers import ObserverPolicy, sample_observers


def obs(kind, speeds, ego_speed=0.0, zone=150.0):
    dets = tuple(Detection(i + 1, "l", 10.0 * (i + 1), s) for i, s in enumerate(speeds))
    return Observation("o", kind, 0.0, "l", ego_speed, dets, zone)


def test_mo_density_four_detections():
    assert mo_point_estimate(obs("MO", [5.0] * 4)).k == pytest.approx(5 * 1000 / 150)


def test_mo_ego_only():
    p = mo_point_estimate(obs("MO", [], ego_speed=10.0, zone=300.0))
    assert p.v == 36.0
    assert p.k == 1000 / 300


def test_mo_flow_product():
    # 3 vehicles over 200 m -> 20 veh/km; speeds average 30 km/h
    p = mo_point_estimate(obs("MO", [25 / 3, 25 / 3], ego_speed=25 / 3, zone=150.0))
    assert p.k == pytest.approx(20.0) and p.v == pytest.approx(30.0)
    assert p.q == pytest.approx(600.0)


def test_po_empty_zone():
    assert po_point_estimate(obs("PO", [])) == PointEstimate(0.0, None, None)


def test_po_three_vehicles():
    p = po_point_estimate(obs("PO", [10.0, 12.0, 14.0]))
    assert p.k == pytest.approx(20.0)
    assert p.v == pytest.approx(43.2)


def test_po_jam():
    p = po_point_estimate(obs("PO", [0.0]))
    assert p.v == 0.0 and p.q == 0.0


def test_kind_contract():
    with pytest.raises(EstimationError):
        mo_point_estimate(obs("PO", []))
    with pytest.raises(EstimationError):
        po_point_estimate(obs("MO", []))
    with pytest.raises(EstimationError):
        mo_point_estimate(obs("MO", [], zone=0.0))


speeds_st = st.lists(st.floats(0, 40, allow_nan=False), max_size=30)


@given(speeds_st, st.floats(0, 40), st.floats(1, 2000))
def test_mo_properties(speeds, ego, zone):
    o = obs("MO", speeds, ego, zone)
    p = mo_point_estimate(o)
    assert p.k >= 1000 / zone
    assert p.q == pytest.approx(p.k * p.v, rel=1e-12, abs=1e-12)
    doubled = mo_point_estimate(obs("MO", [2 * s for s in speeds], 2 * ego, zone))
    assert doubled.k == p.k
    assert doubled.v == pytest.approx(2 * p.v, rel=1e-12, abs=1e-12)
    assert doubled.q == pytest.approx(2 * p.q, rel=1e-12, abs=1e-12)


@given(st.integers(0, 30), st.floats(0, 40), st.floats(1, 2000))
def test_exact_speed_recovery(n, c, zone):
    assert abs(mo_point_estimate(obs("MO", [c] * n, c, zone)).v - 3.6 * c) <= 1e-9 * max(1, c)
    if n:
        assert abs(po_point_estimate(obs("PO", [c] * n, 0, zone)).v - 3.6 * c) <= 1e-9 * max(1, c)


def P(k, v=None):
    return PointEstimate(k, v, None if v is None else k * v)


def test_aggregate_identity():
    st_ = aggregate_interval({"a": [P(30.0, 40.0)] * 300}, 0.0, ("lane", "x"), "mo_estimate")
    assert (st_.k, st_.v, st_.sample_count) == (30.0, 40.0, 1)


def test_aggregate_two_stage_mean():
    st_ = aggregate_interval({"a": [P(10.0)] * 299, "b": [P(30.0)]}, 0.0, ("lane", "x"), "po_estimate")
    assert st_.k == 20.0


def test_aggregate_po_empty_zone_density_only():
    st_ = aggregate_interval({"a": [P(0.0)] * 5, "b": [P(20.0, 36.0)]}, 0.0, ("lane", "x"), "po_estimate")
    assert st_.k == 10.0
    assert st_.v == 36.0 and st_.q == 720.0


def test_aggregate_no_speed_anywhere():
    st_ = aggregate_interval({"a": [P(0.0)]}, 0.0, ("lane", "x"), "po_estimate")
    assert st_.v is None and st_.q is None


def test_aggregate_empty_is_gap():
    assert aggregate_interval({}, 0.0, ("lane", "x"), "mo_estimate") is None
    assert aggregate_interval({"a": []}, 0.0, ("lane", "x"), "mo_estimate") is None


def S(sid, k, v=None, q=None, source="mo_estimate", ts=0.0, n=1):
    return TrafficState("lane", sid, ts, k, v, q, source, n)


def test_combined_weighting():
    out = combine_sources([S("a", 10.0, 30.0, 300.0, n=3), S("a", 30.0, None, None, "po_estimate", n=1)])
    [c] = out
    assert c.k == pytest.approx((3 * 10 + 30) / 4)
    assert c.v == 30.0 and c.sample_count == 4


def test_rollup_cluster_two_lanes():
    [c] = scope_rollup([S("a", 10.0, 20.0, 200.0, n=2), S("b", 20.0, 40.0, 800.0, n=3)], "cluster", {"a": 1, "b": 1})
    assert (c.scope_kind, c.scope_id, c.k, c.v, c.q, c.sample_count) == ("cluster", "1", 15.0, 30.0, 500.0, 5)


def test_rollup_network_identity():
    s = S("a", 12.0, 33.0, 396.0)
    [n] = scope_rollup([s], "network")
    assert (n.k, n.v, n.q) == (s.k, s.v, s.q)


def test_rollup_gaps_and_errors():
    assert scope_rollup([], "network") == []
    with pytest.raises(ValueError):
        scope_rollup([S("a", 1.0)], "cluster", {})
    with pytest.raises(ValueError):
        scope_rollup([S("a", 1.0)], "region")


def test_rollup_four_clusters_bruteforce():
    mapping = {f"l{i}": i % 4 for i in range(12)}
    states = [S(f"l{i}", 3.0 * i + t, 50.0 - i if i % 5 else None, (3.0 * i + t) * (50.0 - i) if i % 5 else None,
                ts=300.0 * t) for i in range(12) for t in range(3)]
    got = {(s.scope_id, s.ts): s for s in scope_rollup(states, "cluster", mapping)}
    assert len(got) == 12
    for c in range(4):
        for t in range(3):
            rows = [s for s in states if mapping[s.scope_id] == c and s.ts == 300.0 * t]
            vs = [s.v for s in rows if s.v is not None]
            assert got[(str(c), 300.0 * t)].k == math.fsum(s.k for s in rows) / len(rows)
            if vs:
                assert got[(str(c), 300.0 * t)].v == pytest.approx(math.fsum(vs) / len(vs), abs=1e-12)


def test_ground_truth_states_skips_unobserved():
    gt = [GroundTruthState("a", 0.0, 10.0, 360.0, 36.0, 35.0, 100, 5), GroundTruthState("b", 0.0, 0.0, 0.0, None)]
    [s] = ground_truth_states(gt)
    assert (s.k, s.v, s.q, s.source) == (10.0, 36.0, 360.0, "ground_truth")
    assert ground_truth_states(gt, "space")[0].v == 35.0


def test_uniform_ring_pipeline_recovers_speed():
    net = builtin_network("ring", length_m=1000.0)
    log = constant_speed_log(net, "ring", 20, 10.0, 600.0)
    agg = AggregationConfig(300.0)
    assign = sample_observers(log, agg, ObserverPolicy(100.0, 0.5, seed=0))
    res = estimate_link_states(log, net, assign, default_sensor_profile(), agg)
    for iv in res:
        for s in iv.states:
            assert s.v == pytest.approx(36.0, abs=1e-9)
            if s.source == "mo_estimate":
                assert abs(s.k - 20.0) <= 2000 / 300


def test_workers_do_not_change_results():
    net = builtin_network("corridor", edges=2, lanes=2, edge_length_m=500.0)
    log = simulate(net, DemandSpec(flows=(Flow("f0", 1500.0, "f1"),)), 1200, seed=3)
    agg = AggregationConfig(300.0)
    assign = sample_observers(log, agg, ObserverPolicy(20.0, seed=4))
    sensors = default_sensor_profile()
    assert estimate_link_states(log, net, assign, sensors, agg, 1) == estimate_link_states(log, net, assign, sensors, agg, 3)
