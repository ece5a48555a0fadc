import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coopfuse.codec import encode_points
from coopfuse.pointcloud import InvalidParameterError, PointCloud, voxel_keys
from coopfuse.roi import (
    BoxRegion,
    ForwardCone,
    FovSector,
    FullFrame,
    build_static_map,
    background_subtract,
    extract_roi,
    parse_roi,
)
from coopfuse.scenesim import DEFAULT_ORIGIN, Scene, SensorModel, car, simulate_scan_labeled, vehicle_pose, wall

coords = st.floats(-100, 100, allow_nan=False)
clouds = st.integers(0, 80).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=coords)).map(lambda xyz: PointCloud(xyz, np.full(len(xyz), 0.3), 16))
specs = st.one_of(
    st.just(FullFrame()),
    st.builds(FovSector, st.floats(-6.0, 6.0), st.floats(0.01, 2 * math.pi)),
    st.builds(ForwardCone, st.floats(0.01, math.pi), st.floats(0.1, 150)),
    st.just(BoxRegion((-10, -5, -2), (20, 5, 3))),
)


def _rows(cloud):
    return {tuple(r) for r in cloud.xyz.tolist()}


def test_full_frame_is_identity():
    cloud = PointCloud([[1, 2, 3], [-4, 0, 1]], [0.1, 0.9], 16)
    assert extract_roi(cloud, FullFrame()) is cloud


def test_sector_keeps_front_drops_back():
    out = extract_roi(PointCloud([[1, 0, 0], [-1, 0, 0]], [0.5, 0.5], 16), FovSector(0.0, 2 * math.pi / 3))
    assert out.xyz.tolist() == [[1.0, 0.0, 0.0]]


def test_full_sector_keeps_everything():
    pts = np.random.default_rng(0).uniform(-50, 50, (500, 3))
    assert len(extract_roi(PointCloud(pts, np.zeros(500), 16), FovSector(1.0, 2 * math.pi))) == 500


def test_sector_wraps_around():
    # centered on pi: both +170 and -170 degrees are inside a 40 degree sector
    pts = [[math.cos(math.radians(a)), math.sin(math.radians(a)), 0] for a in (170, -170, 0, 120)]
    out = extract_roi(PointCloud(pts, np.zeros(4), 16), FovSector(math.pi, math.radians(40)))
    assert len(out) == 2


def test_cone_range_and_angle():
    pts = [[10, 0, 0], [70, 0, 0], [10, 10.5, 0], [10, 9.5, 0]]
    out = extract_roi(PointCloud(pts, np.zeros(4), 16), ForwardCone(math.pi / 4, 60))
    assert out.xyz.tolist() == [[10, 0, 0], [10, 9.5, 0]]


def test_box_region():
    out = extract_roi(PointCloud([[0, 0, 0], [3, 0, 0]], [0, 0], 16), BoxRegion((-1, -1, -1), (1, 1, 1)))
    assert len(out) == 1


@pytest.mark.parametrize("bad", [
    lambda: FovSector(0.0, 0.0),
    lambda: FovSector(0.0, 7.0),
    lambda: ForwardCone(0.0, 10.0),
    lambda: ForwardCone(4.0, 10.0),
    lambda: BoxRegion((0, 0, 0), (1, -1, 1)),
])
def test_invalid_specs(bad):
    with pytest.raises(InvalidParameterError):
        bad()


@given(clouds, specs)
def test_roi_subset_and_idempotent(cloud, spec):
    once = extract_roi(cloud, spec)
    assert _rows(once) <= _rows(cloud)
    assert extract_roi(once, spec) == once
    assert len(encode_points(once)) <= len(encode_points(cloud))


@pytest.mark.parametrize("text, expected", [
    ("full", FullFrame()),
    ("sector:0:120", FovSector(0.0, math.radians(120))),
    ("cone:45:60", ForwardCone(math.pi / 4, 60.0)),
    ("box:-1,-2,-3,1,2,3", BoxRegion((-1, -2, -3), (1, 2, 3))),
])
def test_parse_roi(text, expected):
    assert parse_roi(text) == expected


@pytest.mark.parametrize("text", ["", "sector:1", "cone:a:b", "box:1,2,3", "disk:4"])
def test_parse_roi_rejects(text):
    with pytest.raises(InvalidParameterError):
        parse_roi(text)


# --- static map ----------------------------------------------------------------

def test_one_frame_counts_one():
    frame = PointCloud(np.random.default_rng(1).uniform(-5, 5, (100, 3)), np.zeros(100), 16)
    m = build_static_map([frame])
    assert m.frames == 1 and set(m.counts.tolist()) == {1}
    assert set(build_static_map([frame, frame]).counts.tolist()) == {2}


def test_empty_map_leaves_cloud():
    cloud = PointCloud([[1, 2, 3]], [0.5], 16)
    assert background_subtract(cloud, build_static_map([PointCloud.empty(16)])) == cloud


def test_fully_static_cloud_is_removed():
    frame = PointCloud(np.random.default_rng(2).uniform(-5, 5, (100, 3)), np.zeros(100), 16)
    assert len(background_subtract(frame, build_static_map([frame] * 5), 0.8)) == 0


def test_min_fraction_validated():
    with pytest.raises(InvalidParameterError):
        background_subtract(PointCloud.empty(16), build_static_map([PointCloud.empty(16)]), 0.0)


def _wall_and_mover():
    sensor = SensorModel(vehicle_pose(DEFAULT_ORIGIN, 0, 0, 0.0))
    static = [wall(1, 0, 12, 0.0, 30.0)]
    frames = []
    for k in range(5):
        objs = static + ([car(2, 15, -4, 0.3)] if k == 0 else [])
        frames.append(simulate_scan_labeled(Scene(tuple(objs)), sensor))
    return frames


def test_wall_and_mover_counts():
    frames = _wall_and_mover()
    m = build_static_map([f for f, _ in frames], 0.2)
    first, ids = frames[0]
    wall_counts = m.count_at(first.xyz[ids == 1])
    mover_keys = {tuple(k) for k in voxel_keys(first.xyz[ids == 2], 0.2).tolist()}
    other_keys = {tuple(k) for f, i in frames[1:] for k in voxel_keys(f.xyz, 0.2).tolist()}
    # mover voxels not shared with ground returns of the other frames
    lone = np.array(sorted(mover_keys - other_keys), dtype=float)
    assert len(wall_counts) > 100 and set(wall_counts.tolist()) == {5}
    assert len(lone) > 50
    assert set(m.count_at((lone + 0.5) * 0.2).tolist()) == {1}
    assert (m.counts <= m.frames).all()


def test_background_subtract_keeps_only_mover():
    frames = _wall_and_mover()
    m = build_static_map([f for f, _ in frames], 0.2)
    first, ids = frames[0]
    kept = background_subtract(first, m, 0.8)
    mover = _rows(first.subset(ids == 2))
    assert _rows(kept) <= mover
    assert len(kept) > 0.8 * len(mover)
