"""Geometric baseline detector and detection bookkeeping.

The detector is a stand-in for a learned 3D detector: it removes the ground
plane, single-linkage clusters what remains, fits an oriented box to each
cluster and scores it by the fraction of expected LiDAR returns observed.
Any callable ``(PointCloud, DetectorParams) -> list[DetectionBox]`` can be
used in its place by the experiment harness.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Iterable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .pointcloud import ELEVATION_SPAN_DEG, InvalidParameterError, PointCloud

NEAR_LIMIT = 10.0
FAR_LIMIT = 25.0


class DistanceBand(str, Enum):
    NEAR = "near"
    MEDIUM = "medium"
    FAR = "far"


class Difficulty(str, Enum):
    EASY = "easy"
    MODERATE = "moderate"
    HARD = "hard"


def distance_band(range_m: float) -> DistanceBand:
    """near below 10 m, far above 25 m, medium in between (both edges inclusive)."""
    if not range_m >= 0:
        raise InvalidParameterError(f"range must be non-negative, got {range_m}")
    if range_m < NEAR_LIMIT:
        return DistanceBand.NEAR
    if range_m <= FAR_LIMIT:
        return DistanceBand.MEDIUM
    return DistanceBand.FAR


def classify_difficulty(detected_by_a: bool, detected_by_b: bool) -> Difficulty:
    if detected_by_a and detected_by_b:
        return Difficulty.EASY
    if detected_by_a or detected_by_b:
        return Difficulty.MODERATE
    return Difficulty.HARD


@dataclass(frozen=True)
class DetectionBox:
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # length, width, height
    yaw: float
    score: float = 1.0
    distance_band: DistanceBand = DistanceBand.NEAR

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        if len(self.size) != 3 or min(self.size) <= 0:
            raise InvalidParameterError(f"box sizes must be positive: {self.size}")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidParameterError(f"score must be in [0, 1]: {self.score}")
        object.__setattr__(self, "distance_band", DistanceBand(self.distance_band))

    @classmethod
    def at(cls, center, size, yaw: float, score: float = 1.0) -> DetectionBox:
        """Box whose distance band is derived from the horizontal range of ``center``."""
        return cls(center, size, yaw, score, distance_band(math.hypot(center[0], center[1])))

    @property
    def range(self) -> float:
        return math.hypot(self.center[0], self.center[1])

    def corners_bev(self) -> np.ndarray:
        """Four BEV corners, counter-clockwise."""
        l, w = self.size[0] / 2.0, self.size[1] / 2.0
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]])
        return local @ np.array([[c, s], [-s, c]]) + np.array(self.center[:2])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        d["size"] = list(self.size)
        d["distance_band"] = self.distance_band.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DetectionBox:
        return cls(tuple(d["center"]), tuple(d["size"]), d["yaw"], d["score"], d["distance_band"])


def boxes_to_jsonl(boxes: Iterable[DetectionBox]) -> str:
    return "".join(json.dumps(b.to_dict(), sort_keys=True) + "\n" for b in boxes)


def boxes_from_jsonl(text: str) -> list[DetectionBox]:
    return [DetectionBox.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass(frozen=True)
class DetectorParams:
    ground_height_tolerance: float = 0.2
    cluster_distance: float = 0.5
    min_cluster_points: int = 10
    # points per m^2 of surface facing the sensor at 10 m range
    expected_density: float = 82.0
    sensor_height: float = 1.8
    min_score: float = 0.5
    object_size: tuple[float, float, float] = (4.5, 1.8, 1.5)
    max_object_size: tuple[float, float, float] = (6.5, 3.0, 2.5)
    # fragments closer than this whose union fits the template are one object
    merge_distance: float = 2.5
    merge_slack: float = 0.3

    def __post_init__(self) -> None:
        scalars = (
            self.ground_height_tolerance,
            self.cluster_distance,
            self.min_cluster_points,
            self.expected_density,
            self.sensor_height,
        )
        if min(scalars) <= 0 or min(self.object_size) <= 0 or min(self.max_object_size) <= 0:
            raise InvalidParameterError(f"detector parameters must be positive: {self}")
        if not 0.0 <= self.min_score <= 1.0:
            raise InvalidParameterError(f"min_score must be in [0, 1]: {self.min_score}")

    @classmethod
    def for_sensor(cls, beams: int = 16, azimuth_step_deg: float = 0.2, **overrides) -> DetectorParams:
        """Parameters whose density normalization matches a sensor's angular resolution."""
        lo, hi = ELEVATION_SPAN_DEG[beams]
        el_step = math.radians((hi - lo) / (beams - 1))
        az_step = math.radians(azimuth_step_deg)
        density = 1.0 / ((10.0 * math.tan(az_step)) * (10.0 * math.tan(el_step)))
        overrides.setdefault("expected_density", density)
        return cls(**overrides)


Detector = Callable[[PointCloud, DetectorParams], "list[DetectionBox]"]


def remove_ground(cloud: PointCloud, params: DetectorParams) -> np.ndarray:
    """Indices of points more than the tolerance above the ground plane."""
    ground = -params.sensor_height
    return np.flatnonzero(cloud.xyz[:, 2] > ground + params.ground_height_tolerance)


def cluster_points(xy: np.ndarray, distance: float, cell: float | None = None) -> list[np.ndarray]:
    """Single-linkage clusters (index arrays) at the given linkage distance.

    Callers pass bird's-eye-view coordinates: sparse sensors leave more than a
    linkage distance between beam rings, so 3D linkage would split objects
    into horizontal slices.  Points are first binned into square cells of
    side ``cell`` (default ``distance / 5``) and cells are linked when their
    centers are within ``distance``; this keeps the cost linear in the
    number of points however many beam rings stack over one spot.  Linkage
    is therefore exact up to ``cell * sqrt(2)``.
    """
    n = len(xy)
    if n == 0:
        return []
    cell = distance / 5.0 if cell is None else cell
    keys = np.floor(np.asarray(xy) / cell).astype(np.int64)
    cells, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    m = len(cells)
    pairs = cKDTree((cells + 0.5) * cell).query_pairs(distance, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])), shape=(m, m))
    _, cell_labels = connected_components(graph, directed=False)
    labels = cell_labels[inverse]
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    return np.split(order, splits)


def merge_fragments(xy: np.ndarray, clusters: list[np.ndarray], params: DetectorParams) -> list[np.ndarray]:
    """Join clusters that an occluder split out of one template-sized object.

    Two clusters merge when their nearest points are within ``merge_distance``
    and the bird's-eye-view rectangle around their union is no larger than
    the template footprint plus ``merge_slack``.
    """
    limit_l = params.object_size[0] + params.merge_slack
    limit_w = params.object_size[1] + params.merge_slack
    groups = sorted(clusters, key=lambda c: (-len(c), int(c.min())))
    merged = True
    while merged:
        merged = False
        trees = [cKDTree(xy[g]) for g in groups]
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                gap = trees[i].query(xy[groups[j]], distance_upper_bound=params.merge_distance)[0]
                if not np.isfinite(gap).any():
                    continue
                union = np.concatenate([groups[i], groups[j]])
                _, (eu, ev), _ = min_area_rect(xy[union])
                if max(eu, ev) <= limit_l and min(eu, ev) <= limit_w:
                    groups[i] = np.sort(union)
                    del groups[j]
                    merged = True
                    break
            if merged:
                break
    return groups


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    pts_list = pts.tolist()
    lower: list = []
    for p in pts_list:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts_list):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(points: np.ndarray) -> tuple[np.ndarray, tuple[float, float], float]:
    """Smallest enclosing rectangle: ``(center_xy, (extent_u, extent_v), angle)``.

    ``angle`` in [0, pi/2) is the direction of the ``u`` axis.
    """
    hull = convex_hull_2d(points)
    if len(hull) == 1:
        return hull[0].copy(), (0.0, 0.0), 0.0
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.unique(np.round(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2), 12))
    best = None
    for a in angles:
        c, s = math.cos(a), math.sin(a)
        u = hull @ np.array([c, s])
        v = hull @ np.array([-s, c])
        eu, ev = u.max() - u.min(), v.max() - v.min()
        key = (round(eu * ev, 12), round(eu + ev, 12), a)
        if best is None or key < best[0]:
            mid_u, mid_v = (u.max() + u.min()) / 2, (v.max() + v.min()) / 2
            center = np.array([c * mid_u - s * mid_v, s * mid_u + c * mid_v])
            best = (key, center, (float(eu), float(ev)), float(a))
    return best[1], best[2], best[3]


def closeness_rect(points: np.ndarray, steps: int = 90, d0: float = 0.01):
    """Rectangle whose edges the points hug: ``(center_xy, (extent_u, extent_v), angle)``.

    Candidate orientations in [0, pi/2) are scored by the sum over points of
    1 / max(distance to the nearest edge, d0); this tolerates sparse legs of
    an L-shaped return far better than the minimum-area rectangle.
    """
    pts = np.asarray(points, dtype=float)
    angles = np.arange(steps) * (math.pi / 2 / steps)
    c, s = np.cos(angles), np.sin(angles)
    u = pts[:, :1] * c + pts[:, 1:2] * s
    v = -pts[:, :1] * s + pts[:, 1:2] * c
    du = np.minimum(u - u.min(axis=0), u.max(axis=0) - u)
    dv = np.minimum(v - v.min(axis=0), v.max(axis=0) - v)
    score = (1.0 / np.maximum(np.minimum(du, dv), d0)).sum(axis=0)
    k = int(np.argmax(score))
    a = float(angles[k])
    uk, vk = u[:, k], v[:, k]
    mid_u, mid_v = (uk.max() + uk.min()) / 2, (vk.max() + vk.min()) / 2
    center = np.array([c[k] * mid_u - s[k] * mid_v, s[k] * mid_u + c[k] * mid_v])
    return center, (float(np.ptp(uk)), float(np.ptp(vk))), a


def fit_box(
    xyz: np.ndarray, params: DetectorParams, origins: np.ndarray | None = None
) -> tuple[tuple, tuple, float] | None:
    """Oriented box completed to the template object size, or None if the cluster is too big.

    Unobserved extent is added on the side facing away from whichever sensors
    observed the points (``origins``, per point; default the frame origin).
    """
    tmpl_l, tmpl_w, tmpl_h = params.object_size
    max_l, max_w, max_h = params.max_object_size
    center, (eu, ev), angle = closeness_rect(xyz[:, :2])
    ground = -params.sensor_height
    height = float(xyz[:, 2].max()) - ground
    if max(eu, ev) > max_l or min(eu, ev) > max_w or height > max_h:
        return None

    observers = np.zeros((len(xyz), 2)) if origins is None else np.asarray(origins)[:, :2]
    u = np.array([math.cos(angle), math.sin(angle)])
    v = np.array([-u[1], u[0]])
    if max(eu, ev) > tmpl_w + 0.3:
        length_on_u = eu >= ev
    else:
        # only an end face is visible: the length runs along the line of sight
        sight = center - observers.mean(axis=0)
        length_on_u = abs(u @ sight) >= abs(v @ sight)
    if length_on_u:
        axis_l, e_l, axis_w, e_w = u, eu, v, ev
    else:
        axis_l, e_l, axis_w, e_w = v, ev, u, eu

    for axis, extent, target in ((axis_l, e_l, tmpl_l), (axis_w, e_w, tmpl_w)):
        if extent < target:
            # grow away from the side the observers stand on
            side = float(np.mean(np.sign((observers - center) @ axis)))
            direction = -1.0 if side > 0 else 1.0 if side < 0 else (1.0 if center @ axis >= 0 else -1.0)
            center = center + direction * (target - extent) / 2.0 * axis
    length, width = max(e_l, tmpl_l), max(e_w, tmpl_w)
    height = max(height, tmpl_h)
    yaw = math.atan2(axis_l[1], axis_l[0])
    if yaw <= -math.pi / 2:
        yaw += math.pi
    elif yaw > math.pi / 2:
        yaw -= math.pi
    return (float(center[0]), float(center[1]), ground + height / 2.0), (length, width, height), yaw


def expected_points(center, size, yaw: float, params: DetectorParams, viewpoint=(0.0, 0.0)) -> float:
    """Returns a full, unoccluded object of this box would produce for a sensor at ``viewpoint``."""
    dx, dy = center[0] - viewpoint[0], center[1] - viewpoint[1]
    r = max(math.hypot(dx, dy), 1.0)
    rel = yaw - math.atan2(dy, dx)
    projected_width = size[0] * abs(math.sin(rel)) + size[1] * abs(math.cos(rel))
    visible_height = max(size[2] - params.ground_height_tolerance, 0.1)
    return params.expected_density * (10.0 / r) ** 2 * projected_width * visible_height


def detect(
    cloud: PointCloud, params: DetectorParams | None = None, origins: np.ndarray | None = None
) -> list[DetectionBox]:
    """Detect objects; output sorted by range then position, deterministic for a given point set.

    ``origins`` optionally gives, per point, the position of the sensor that
    observed it (see ``FusedCloud.observer_origins``).
    """
    params = params or DetectorParams()
    idx = remove_ground(cloud, params)
    xyz = cloud.xyz[idx]
    obs = None if origins is None else np.asarray(origins, dtype=float)[idx]
    boxes = []
    clusters = merge_fragments(xyz[:, :2], cluster_points(xyz[:, :2], params.cluster_distance), params)
    for members in clusters:
        if len(members) < params.min_cluster_points:
            continue
        fitted = fit_box(xyz[members], params, None if obs is None else obs[members])
        if fitted is None:
            continue
        center, size, yaw = fitted
        if obs is None:
            score = min(1.0, len(members) / expected_points(center, size, yaw, params))
        else:
            # each viewpoint contributes the fraction of the object it covered
            views, counts = np.unique(obs[members][:, :2], axis=0, return_counts=True)
            score = min(1.0, sum(
                n / expected_points(center, size, yaw, params, tuple(v)) for v, n in zip(views, counts)
            ))
        if score < params.min_score:
            continue
        boxes.append(DetectionBox.at(center, size, yaw, score))
    boxes.sort(key=lambda b: (round(b.range, 9), b.center, b.yaw))
    return boxes


def _clip(subject: list, a: np.ndarray, b: np.ndarray) -> list:
    """Keep the part of polygon ``subject`` left of the directed edge a->b."""
    def side(p):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

    out = []
    n = len(subject)
    for i in range(n):
        cur, nxt = subject[i], subject[(i + 1) % n]
        sc, sn = side(cur), side(nxt)
        if sc >= 0:
            out.append(cur)
        if (sc >= 0) != (sn >= 0):
            t = sc / (sc - sn)
            out.append(cur + t * (nxt - cur))
    return out


def _polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def bev_iou(a: DetectionBox, b: DetectionBox) -> float:
    ca, cb = a.corners_bev(), b.corners_bev()
    inter = list(ca)
    for i in range(4):
        if not inter:
            break
        inter = _clip(inter, cb[i], cb[(i + 1) % 4])
    area_i = _polygon_area(inter)
    union = a.size[0] * a.size[1] + b.size[0] * b.size[1] - area_i
    return area_i / union if union > 0 else 0.0


@dataclass(frozen=True)
class Match:
    detection: int
    truth: int
    iou: float


def match_detections(
    boxes: list[DetectionBox], truth: list[DetectionBox], iou_threshold: float = 0.5
) -> list[Match]:
    """Greedy matching, highest BEV IoU first; each box and truth used at most once."""
    if not 0.0 < iou_threshold < 1.0:
        raise InvalidParameterError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    candidates = []
    for i, det in enumerate(boxes):
        for j, gt in enumerate(truth):
            iou = bev_iou(det, gt)
            if iou >= iou_threshold:
                candidates.append((-iou, i, j))
    candidates.sort()
    used_d, used_t, matches = set(), set(), []
    for neg_iou, i, j in candidates:
        if i in used_d or j in used_t:
            continue
        used_d.add(i)
        used_t.add(j)
        matches.append(Match(i, j, -neg_iou))
    return matches
