import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopfuse.codec import make_package, package_size, serialize_package
from coopfuse.netsim import (
    ChannelModel,
    ExchangeScenario,
    TrafficReport,
    TruncatedRunError,
    feasibility_check,
    simulate_exchange,
    transmission_time,
    uniform_azimuth_frame,
)
from coopfuse.pointcloud import InvalidParameterError, PointCloud
from coopfuse.scenesim import DEFAULT_ORIGIN, vehicle_pose

FREE = ChannelModel(6e6, 0.0)


def _repeat(frame):
    return itertools.repeat(frame)


def _both(n, seed=0):
    frame = uniform_azimuth_frame(n, seed)
    return {"A": _repeat(frame), "B": _repeat(frame)}


def test_full_frame_at_six_megabit():
    assert math.isclose(transmission_time(225_000, FREE), 0.3)


def test_empty_message_is_latency_only():
    assert transmission_time(0, ChannelModel(6e6, 0.002)) == 0.002


def test_fast_channel():
    assert abs(transmission_time(225_000, ChannelModel(27e6, 0.0)) - 0.0667) < 1e-4


def test_negative_size_rejected():
    with pytest.raises(InvalidParameterError):
        transmission_time(-1, FREE)


@pytest.mark.parametrize("kwargs", [{"bandwidth": 0}, {"latency": -1}, {"loss_rate": 1.0}])
def test_channel_validation(kwargs):
    with pytest.raises(InvalidParameterError):
        ChannelModel(**kwargs)


def test_following_is_one_way():
    xyz = np.column_stack([np.linspace(5, 50, 10_000), np.zeros(10_000), np.full(10_000, -0.5)])
    frame = PointCloud(xyz, np.full(10_000, 0.5), 16)
    report = simulate_exchange("following", {"A": _repeat(frame)}, 1.0, FREE, 8.0)
    assert len(report.messages) == 8
    assert all(m.sender == "A" and m.points == 10_000 for m in report.messages)
    assert report.totals()["B"] == 0
    assert report.totals()["A"] == 8 * package_size(10_000)


def test_opposite_lanes_thirty_thousand():
    report = simulate_exchange(ExchangeScenario.OPPOSITE_LANES, _both(30_000), 1.0, FREE, 8.0)
    per_second = report.per_second_bytes()
    assert per_second["A"] == per_second["B"] == [210_128] * 8
    # the package size matches an actually encoded package
    pkg = make_package(uniform_azimuth_frame(30_000), vehicle_pose(DEFAULT_ORIGIN, 0, 0, 0))
    assert len(serialize_package(pkg)) == 210_128
    ok, worst = feasibility_check(report)
    assert ok and math.isclose(worst, 2 * 8 * 210_128 / 6e6)


def test_junction_sector_is_a_third():
    full = package_size(30_000)
    report = simulate_exchange("junction", _both(30_000, seed=4), 1.0, FREE, 1.0)
    for m in report.messages:
        assert abs(m.size / full - 1 / 3) <= 0.1 / 3


@pytest.mark.parametrize("scenario", list(ExchangeScenario))
def test_scenarios_feasible_at_one_hertz(scenario):
    report = simulate_exchange(scenario, _both(32_000), 1.0, ChannelModel(), 8.0)
    ok, worst = feasibility_check(report)
    assert ok and worst < 1.0


def test_ten_hertz_overloads_channel():
    report = simulate_exchange("opposite", _both(30_000), 10.0, ChannelModel(), 8.0)
    assert len(report.messages) == 160
    ok, worst = feasibility_check(report)
    assert not ok
    assert math.isclose(worst, 2 * 10 * 8 * 210_128 / 6e6)


def test_empty_report_is_feasible():
    assert feasibility_check(TrafficReport(ExchangeScenario.JUNCTION, 8.0, 1.0, ChannelModel())) == (True, 0.0)


def test_recheck_on_faster_channel():
    report = simulate_exchange("opposite", _both(30_000), 10.0, ChannelModel(), 2.0)
    assert feasibility_check(report, ChannelModel(27e6))[0] is False
    assert feasibility_check(report, ChannelModel(60e6))[0] is True


def test_nested_specs_are_monotone():
    frames = [uniform_azimuth_frame(5_000, seed=s) for s in range(3)]
    totals = {}
    for scenario in ExchangeScenario:
        r = simulate_exchange(scenario, {"A": iter(frames), "B": iter(frames)}, 1.0, FREE, 3.0)
        totals[scenario] = sum(r.totals().values())
    assert totals[ExchangeScenario.FOLLOWING] <= totals[ExchangeScenario.JUNCTION] <= totals[ExchangeScenario.OPPOSITE_LANES]


@given(st.integers(0, 2000), st.floats(0.5, 5.0), st.floats(1.0, 6.0), st.sampled_from(list(ExchangeScenario)))
@settings(max_examples=25, deadline=None)
def test_report_accounting(n, rate, window, scenario):
    report = simulate_exchange(scenario, _both(n, seed=n), rate, ChannelModel(loss_rate=0.2), window)
    assert sum(report.totals().values()) == sum(m.size for m in report.messages)
    assert all(m.size == 128 + 7 * m.points for m in report.messages)
    for v, per_sec in report.per_second_bytes().items():
        assert sum(per_sec) == report.totals()[v]


def test_seeded_losses_are_deterministic():
    ch = ChannelModel(loss_rate=0.4)
    a = simulate_exchange("opposite", _both(100), 5.0, ch, 8.0, seed=11)
    b = simulate_exchange("opposite", _both(100), 5.0, ch, 8.0, seed=11)
    c = simulate_exchange("opposite", _both(100), 5.0, ch, 8.0, seed=12)
    assert a.messages == b.messages
    assert [m.lost for m in a.messages] != [m.lost for m in c.messages]
    assert any(m.lost for m in a.messages)


def test_lost_messages_still_use_airtime():
    ch = ChannelModel(loss_rate=0.9)
    lossy = simulate_exchange("opposite", _both(1000), 1.0, ch, 4.0, seed=1)
    clean = simulate_exchange("opposite", _both(1000), 1.0, ChannelModel(), 4.0, seed=1)
    assert lossy.utilization() == clean.utilization()


def test_truncated_run_keeps_partial_report():
    frame = uniform_azimuth_frame(100)
    with pytest.raises(TruncatedRunError) as err:
        simulate_exchange("opposite", {"A": [frame] * 3, "B": [frame] * 8}, 1.0, FREE, 8.0)
    assert err.value.report.totals()["A"] == 3 * package_size(100)
    # A is polled first at tick 3, so B never sends that tick
    assert len(err.value.report.messages) == 6


def test_invalid_rate_and_window():
    with pytest.raises(InvalidParameterError):
        simulate_exchange("junction", _both(10), 0.0)
    with pytest.raises(InvalidParameterError):
        simulate_exchange("junction", _both(10), 1.0, window=0.0)


def test_unknown_scenario():
    with pytest.raises(InvalidParameterError):
        ExchangeScenario.parse("convoy")
    assert ExchangeScenario.parse("Opposite-Lanes") is ExchangeScenario.OPPOSITE_LANES


def test_csv_layout():
    report = simulate_exchange("following", _both(50), 1.0, FREE, 2.0)
    text = report.to_csv(feasibility_check(report))
    lines = text.splitlines()
    assert lines[0] == "second,vehicle,bytes,airtime_ms"
    assert len(lines) == 1 + 2 * 2 + 1
    assert lines[1].startswith("0,A,")
    assert lines[2] == "0,B,0,0.000"
    assert lines[-1].startswith("# feasible=true")
