import math

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from coopfuse.detect import (
    DetectionBox,
    DetectorParams,
    Difficulty,
    DistanceBand,
    bev_iou,
    boxes_from_jsonl,
    boxes_to_jsonl,
    classify_difficulty,
    closeness_rect,
    cluster_points,
    detect,
    distance_band,
    match_detections,
)
from coopfuse.pointcloud import InvalidParameterError, PointCloud
from coopfuse.scenesim import DEFAULT_ORIGIN, Scene, SensorModel, car, object_box_in_sensor, simulate_scan, vehicle_pose

POSE = vehicle_pose(DEFAULT_ORIGIN, 0, 0, 0.0)
PARAMS = DetectorParams.for_sensor(16)


def _scan(*objects, beams=16):
    scene = Scene(tuple(objects))
    return scene, simulate_scan(scene, SensorModel(POSE, beams=beams))


def test_empty_cloud():
    assert detect(PointCloud.empty(16), PARAMS) == []


def test_ground_only():
    _, cloud = _scan()
    assert len(cloud) > 0
    assert detect(cloud, PARAMS) == []


def test_single_car_at_twelve_meters():
    scene, cloud = _scan(car(1, 12, 0, 0.0), beams=64)
    truth = object_box_in_sensor(scene, scene.objects[0], POSE)
    on_car = int((cloud.xyz[:, 2] > -1.6).sum())
    assert on_car >= 600
    boxes = detect(cloud, DetectorParams.for_sensor(64))
    assert len(boxes) == 1
    assert boxes[0].distance_band == DistanceBand.MEDIUM
    assert math.dist(boxes[0].center[:2], truth.center[:2]) <= 0.3


def test_two_cars_eight_meters_apart():
    _, cloud = _scan(car(1, 12, -4, 0.0), car(2, 12, 4, 0.0), beams=64)
    boxes = detect(cloud, DetectorParams.for_sensor(64, cluster_distance=0.5))
    assert len(boxes) == 2
    assert sorted(round(b.center[1]) for b in boxes) == [-4, 4]


def test_min_cluster_points_respected():
    # a tight clump of 5 points above the ground
    clump = PointCloud(np.array([[8.0, 0.0, 0.0]]) + np.random.default_rng(0).normal(0, 0.05, (5, 3)), np.ones(5), 16)
    assert detect(clump, DetectorParams(min_cluster_points=10, min_score=0.0)) == []
    boxes = detect(clump, DetectorParams(min_cluster_points=3, min_score=0.0))
    assert len(boxes) == 1


def test_permutation_invariant():
    _, cloud = _scan(car(1, 9, 3, 0.4), car(2, 20, -5, 1.2))
    perm = np.random.default_rng(5).permutation(len(cloud))
    a = detect(cloud, PARAMS)
    b = detect(cloud.subset(perm), PARAMS)
    assert len(a) == len(b) == 2
    for x, y in zip(a, b):
        assert np.allclose(x.center, y.center, atol=1e-9)
        assert np.allclose(x.size, y.size, atol=1e-9)
        assert math.isclose(x.score, y.score, abs_tol=1e-9)


def test_duplicated_points_never_lower_score():
    _, cloud = _scan(car(1, 22, 2, 0.3))
    params = DetectorParams.for_sensor(16, min_score=0.0)
    (before,) = detect(cloud, params)
    above = cloud.subset(cloud.xyz[:, 2] > -1.5)
    denser = PointCloud(np.vstack([cloud.xyz, above.xyz[::2]]),
                        np.concatenate([cloud.reflectance, above.reflectance[::2]]), 16)
    (after,) = detect(denser, params)
    assert after.score >= before.score


def test_every_box_has_enough_points():
    _, cloud = _scan(car(1, 9, 3, 0.4), car(2, 20, -5, 1.2), car(3, 35, 10, 0.0))
    for box in detect(cloud, PARAMS):
        pts = cloud.xyz[cloud.xyz[:, 2] > -1.6]
        inside = shapely.contains_xy(Polygon(box.corners_bev()).buffer(1e-6), pts[:, 0], pts[:, 1])
        assert inside.sum() >= PARAMS.min_cluster_points


def test_closeness_rect_recovers_l_shape():
    # two perpendicular sides of a 4.5 x 1.8 box rotated 0.5 rad
    c, s = math.cos(0.5), math.sin(0.5)
    long = np.column_stack([np.linspace(0, 4.5, 60), np.zeros(60)])
    short = np.column_stack([np.zeros(25), np.linspace(0, 1.8, 25)])
    pts = np.vstack([long, short]) @ np.array([[c, s], [-s, c]])
    _, _, yaw = closeness_rect(pts)
    assert abs(math.sin(2 * (yaw - 0.5))) < 0.05


def test_cluster_points_separates():
    xy = np.array([[0, 0], [0.3, 0], [0.6, 0], [5, 5], [5.2, 5]])
    groups = sorted(sorted(g.tolist()) for g in cluster_points(xy, 0.5))
    assert groups == [[0, 1, 2], [3, 4]]


# --- distance bands and difficulty ---------------------------------------------

@pytest.mark.parametrize("r, band", [(0, "near"), (5, "near"), (9.999, "near"), (10, "medium"),
                                     (25, "medium"), (25.001, "far"), (30, "far")])
def test_distance_band(r, band):
    assert distance_band(r) == DistanceBand(band)


def test_negative_range_rejected():
    with pytest.raises(InvalidParameterError):
        distance_band(-1)


@given(st.floats(0, 500), st.floats(0, 500))
def test_distance_band_monotone(a, b):
    order = [DistanceBand.NEAR, DistanceBand.MEDIUM, DistanceBand.FAR]
    lo, hi = min(a, b), max(a, b)
    assert order.index(distance_band(lo)) <= order.index(distance_band(hi))


@pytest.mark.parametrize("a, b, d", [(True, True, "easy"), (True, False, "moderate"),
                                     (False, True, "moderate"), (False, False, "hard")])
def test_classify_difficulty(a, b, d):
    assert classify_difficulty(a, b) == Difficulty(d)


# --- IoU and matching ----------------------------------------------------------

boxes = st.builds(
    lambda x, y, l, w, yaw: DetectionBox.at((x, y, 0.0), (l, w, 1.5), yaw),
    st.floats(-10, 10), st.floats(-10, 10), st.floats(0.5, 6), st.floats(0.5, 3), st.floats(-math.pi, math.pi),
)


@given(boxes, boxes)
@settings(max_examples=200)
def test_bev_iou_matches_shapely(a, b):
    pa, pb = Polygon(a.corners_bev()), Polygon(b.corners_bev())
    ref = pa.intersection(pb).area / pa.union(pb).area
    assert math.isclose(bev_iou(a, b), ref, abs_tol=1e-9)
    assert math.isclose(bev_iou(a, b), bev_iou(b, a), abs_tol=1e-12)


def test_identical_lists_match_perfectly():
    truth = [DetectionBox.at((10, 0, 0), (4.5, 1.8, 1.5), 0.1), DetectionBox.at((20, 5, 0), (4.5, 1.8, 1.5), 1.0)]
    m = match_detections(truth, truth, 0.5)
    assert len(m) == 2 and all(math.isclose(x.iou, 1.0) for x in m)


def test_disjoint_boxes_do_not_match():
    a = [DetectionBox.at((10, 0, 0), (4, 2, 1.5), 0.0)]
    b = [DetectionBox.at((30, 0, 0), (4, 2, 1.5), 0.0)]
    assert match_detections(a, b, 0.5) == []


def test_single_match_at_iou_point_six():
    # shift along the length: overlap 4 - s, IoU = (4 - s) / (4 + s) = 0.6 at s = 1
    det = [DetectionBox.at((11, 0, 0), (4, 2, 1.5), 0.0)]
    truth = [DetectionBox.at((10, 0, 0), (4, 2, 1.5), 0.0), DetectionBox.at((10, 20, 0), (4, 2, 1.5), 0.0)]
    ref = Polygon(det[0].corners_bev()).intersection(Polygon(truth[0].corners_bev())).area / (8 + 8 - 6)
    m = match_detections(det, truth, 0.5)
    assert len(m) == 1 and m[0].truth == 0
    assert math.isclose(m[0].iou, 0.6) and math.isclose(ref, 0.6)


def test_greedy_prefers_best_pair():
    det = [DetectionBox.at((10.5, 0, 0), (4, 2, 1.5), 0.0)]
    truth = [DetectionBox.at((11.5, 0, 0), (4, 2, 1.5), 0.0), DetectionBox.at((10.4, 0, 0), (4, 2, 1.5), 0.0)]
    (m,) = match_detections(det, truth, 0.5)
    assert m.truth == 1


def test_match_threshold_validated():
    with pytest.raises(InvalidParameterError):
        match_detections([], [], 1.0)


@given(st.lists(boxes, max_size=5), st.lists(boxes, max_size=5))
@settings(max_examples=50)
def test_each_truth_matched_once(dets, truth):
    m = match_detections(dets, truth, 0.3)
    assert len({x.truth for x in m}) == len(m) == len({x.detection for x in m})
    assert all(x.iou >= 0.3 for x in m)


def test_jsonl_round_trip():
    items = [DetectionBox.at((10.25, -3.5, -1.05), (4.5, 1.8, 1.5), 0.3, 0.75),
             DetectionBox.at((2, 1, 0), (1, 1, 1), -2.0, 0.0)]
    text = boxes_to_jsonl(items)
    assert len(text.splitlines()) == 2
    assert boxes_from_jsonl(text) == items


def test_box_validation():
    with pytest.raises(InvalidParameterError):
        DetectionBox((0, 0, 0), (0, 1, 1), 0.0)
    with pytest.raises(InvalidParameterError):
        DetectionBox((0, 0, 0), (1, 1, 1), 0.0, score=1.5)
