import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avaas.microsim import DemandSpec, Flow, InitialPlacement, simulate
from avaas.network import builtin_network
from avaas.trajectory import (
    IngestReport,
    TrajectoryFormatError,
    dumps_trajectory,
    parse_trajectory,
)

HEADER = "timestep_s,vehicle_id,edge_id,lane_index,position_m,speed_mps\n"


def test_round_trip_corridor(corridor):
    log = simulate(corridor, DemandSpec(flows=(Flow("f0", 900.0, "f1"),)), 600, seed=4)
    assert parse_trajectory(dumps_trajectory(log, corridor), corridor) == log


def test_round_trip_with_empty_frames(corridor):
    # arrivals start late, so the first frames are empty
    log = simulate(corridor, DemandSpec(flows=(Flow("f0", 600.0, "f1", start_s=50.0),)), 200, seed=1)
    assert len(log.frames[0]) == 0
    assert parse_trajectory(dumps_trajectory(log, corridor), corridor) == log


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 30), st.integers(0, 1000), st.sampled_from([0.5, 1.0, 2.0]))
def test_round_trip_property(n, seed, step):
    net = builtin_network("ring", length_m=400.0, lanes=2)
    log = simulate(net, DemandSpec(initial=(InitialPlacement("ring", n, 3.0, "random"),)), 60, step, seed)
    assert parse_trajectory(dumps_trajectory(log, net, ";"), net, delimiter=";") == log


def test_three_row_fixture(ring):
    text = HEADER + "0,7,ring,0,10.0,5.0\n1,7,ring,0,15.0,5.0\n2,7,ring,0,20.0,5.0\n"
    log = parse_trajectory(text, ring)
    assert len(log.frames) == 3
    assert log.step_size == 1.0
    assert [f[0].position for f in log.frames] == [10.0, 15.0, 20.0]
    assert log.entries == ()


def test_position_beyond_lane_names_row(ring):
    text = HEADER + "0,1,ring,0,10.0,5.0\n1,1,ring,0,1200.0,5.0\n"
    with pytest.raises(TrajectoryFormatError) as exc:
        parse_trajectory(text, ring)
    assert exc.value.row == 3
    assert "row 3" in str(exc.value)


@pytest.mark.parametrize("row, needle", [
    ("0,1,nowhere,0,1.0,1.0", "unknown lane"),
    ("0,1,ring,3,1.0,1.0", "unknown lane"),
    ("0,1,ring,0,abc,1.0", "malformed"),
    ("0,1,ring,0,1.0", "malformed"),
    ("0,1,ring,0,1.0,-2.0", "negative speed"),
])
def test_bad_rows(ring, row, needle):
    with pytest.raises(TrajectoryFormatError, match=needle):
        parse_trajectory(HEADER + row + "\n", ring)


def test_duplicate_vehicle_timestep(ring):
    with pytest.raises(TrajectoryFormatError, match="duplicate"):
        parse_trajectory(HEADER + "0,1,ring,0,1.0,1.0\n0,1,ring,0,9.0,1.0\n", ring)


def test_non_constant_step(ring):
    text = HEADER + "0,1,ring,0,1.0,1.0\n1,1,ring,0,2.0,1.0\n2.5,1,ring,0,3.0,1.0\n"
    with pytest.raises(TrajectoryFormatError, match="non-constant step"):
        parse_trajectory(text, ring)


def test_bad_header(ring):
    with pytest.raises(TrajectoryFormatError, match="header"):
        parse_trajectory("t,id\n0,1\n", ring)


def test_lenient_mode_drops_and_counts(ring):
    text = HEADER + "0,1,ring,0,1.0,1.0\n0,2,ring,0,5000.0,1.0\n1,1,ring,0,2.0,1.0\n1,3,xx,0,1.0,1.0\n"
    report = IngestReport()
    log = parse_trajectory(io.StringIO(text), ring, strict=False, report=report)
    assert report.rows == 4 and report.dropped == 2
    assert report.reasons == {"position out of range": 1, "unknown lane": 1}
    assert [len(f) for f in log.frames] == [1, 1]


def test_gap_in_timesteps_becomes_empty_frame(ring):
    text = HEADER + "0,1,ring,0,1.0,1.0\n1,1,ring,0,2.0,1.0\n3,1,ring,0,4.0,1.0\n"
    log = parse_trajectory(text, ring)
    assert [len(f) for f in log.frames] == [1, 1, 0, 1]
