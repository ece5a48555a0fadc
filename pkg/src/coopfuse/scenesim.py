"""Synthetic worlds and a ray-casting LiDAR.

The world frame is the ENU tangent plane at ``Scene.origin``.  Objects are
boxes that are axis-aligned in their own yaw frame; the ground is the plane
``z = ground_height``.  Scans come back in the sensor frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .detect import DetectionBox
from .geometry import (
    EulerAngles,
    GeodeticCoord,
    VehiclePose,
    pose_from_enu,
    sensor_to_enu,
)
from .pointcloud import ELEVATION_SPAN_DEG, PointCloud

DEFAULT_ORIGIN = GeodeticCoord(33.2075, -97.1526, 190.0)
SENSOR_HEIGHT = 1.8
CAR_SIZE = (4.5, 1.8, 1.5)
WALL_HEIGHT = 4.0
WALL_THICKNESS = 0.3

REFLECTANCE = {"car": 0.6, "wall": 0.3, "ground": 0.1}
_GROUND = -1
_EPS = 1e-9


@dataclass(frozen=True)
class SceneObject:
    id: int
    label: str
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # along local x, local y, z
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        if min(self.size) <= 0:
            raise ValueError(f"object {self.id} has non-positive size {self.size}")

    def corners_bev(self) -> np.ndarray:
        return DetectionBox(self.center, self.size, self.yaw).corners_bev()


def car(id: int, x: float, y: float, yaw: float, ground: float = 0.0) -> SceneObject:
    return SceneObject(id, "car", (x, y, ground + CAR_SIZE[2] / 2), CAR_SIZE, yaw)


def wall(id: int, x: float, y: float, yaw: float, length: float, ground: float = 0.0,
         height: float = WALL_HEIGHT) -> SceneObject:
    return SceneObject(id, "wall", (x, y, ground + height / 2), (length, WALL_THICKNESS, height), yaw)


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...] = ()
    ground_height: float | None = 0.0
    extent: float = 200.0
    origin: GeodeticCoord = DEFAULT_ORIGIN

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        for obj in self.objects:
            if max(abs(obj.center[0]), abs(obj.center[1])) > self.extent:
                raise ValueError(f"object {obj.id} lies outside the world extent")

    def get(self, object_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(object_id)

    def without(self, labels=(), ids=()) -> Scene:
        keep = tuple(o for o in self.objects if o.label not in labels and o.id not in ids)
        return replace(self, objects=keep)


@dataclass(frozen=True)
class SensorModel:
    pose: VehiclePose
    beams: int = 16
    elevation_span: tuple[float, float] | None = None  # degrees
    azimuth_step: float = 0.2  # degrees
    max_range: float = 100.0

    def __post_init__(self) -> None:
        if self.beams not in ELEVATION_SPAN_DEG:
            raise ValueError(f"unsupported beam count {self.beams}")
        if self.elevation_span is None:
            object.__setattr__(self, "elevation_span", ELEVATION_SPAN_DEG[self.beams])
        steps = 360.0 / self.azimuth_step
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"azimuth step {self.azimuth_step} does not divide 360")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, azimuth-major."""
        el = np.radians(np.linspace(self.elevation_span[0], self.elevation_span[1], self.beams))
        az = np.radians(np.arange(int(round(360.0 / self.azimuth_step))) * self.azimuth_step)
        az_g, el_g = np.meshgrid(az, el, indexing="ij")
        return np.stack(
            [np.cos(el_g) * np.cos(az_g), np.cos(el_g) * np.sin(az_g), np.sin(el_g)], axis=-1
        ).reshape(-1, 3)


def _ray_box(origin: np.ndarray, dirs: np.ndarray, obj: SceneObject) -> np.ndarray:
    """Entry distance of each ray into the box (slab method); inf on a miss."""
    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    to_local = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    o = to_local @ (origin - np.asarray(obj.center))
    d = dirs @ to_local.T
    half = np.asarray(obj.size) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # rays parallel to a slab: inside -> unconstrained, outside -> miss
    parallel = d == 0
    inside = np.abs(o) <= half
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    hit = (near <= far) & (near > _EPS)
    return np.where(hit, near, np.inf)


def cast_rays(scene: Scene, sensor: SensorModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(directions, distances, hit_ids)`` for every ray; misses have distance inf."""
    dirs_s = sensor.ray_directions()
    R, t = sensor_to_enu(scene.origin, sensor.pose)
    dirs_w = dirs_s @ R.T
    best = np.full(len(dirs_s), np.inf)
    ids = np.full(len(dirs_s), _GROUND - 1, dtype=np.int64)
    if scene.ground_height is not None:
        with np.errstate(divide="ignore"):
            tg = np.where(dirs_w[:, 2] < 0, (scene.ground_height - t[2]) / dirs_w[:, 2], np.inf)
        tg = np.where(tg > _EPS, tg, np.inf)
        best = tg
        ids = np.where(np.isfinite(tg), _GROUND, ids)
    for obj in scene.objects:
        tb = _ray_box(t, dirs_w, obj)
        closer = tb < best
        best = np.where(closer, tb, best)
        ids = np.where(closer, obj.id, ids)
    best = np.where(best <= sensor.max_range, best, np.inf)
    return dirs_s, best, ids


def simulate_scan_labeled(
    scene: Scene, sensor: SensorModel, seed: int = 0, noise_sigma: float = 0.0
) -> tuple[PointCloud, np.ndarray]:
    """Scan plus the id of the object each point hit (-1 for ground)."""
    dirs, dist, ids = cast_rays(scene, sensor)
    hit = np.isfinite(dist)
    dist, ids, dirs = dist[hit], ids[hit], dirs[hit]
    if noise_sigma > 0:
        dist = dist + np.random.default_rng(seed).normal(0.0, noise_sigma, len(dist))
    labels = {o.id: o.label for o in scene.objects}
    refl = np.array([REFLECTANCE.get(labels.get(i, "ground"), 0.5) for i in ids.tolist()])
    cloud = PointCloud(dirs * dist[:, None], refl, sensor.beams, frame_id=f"scan-{seed}")
    return cloud, ids


def simulate_scan(scene: Scene, sensor: SensorModel, seed: int = 0, noise_sigma: float = 0.0) -> PointCloud:
    return simulate_scan_labeled(scene, sensor, seed, noise_sigma)[0]


def object_box_in_sensor(scene: Scene, obj: SceneObject, pose: VehiclePose) -> DetectionBox:
    """Ground-truth box of ``obj`` expressed in the sensor frame of ``pose``."""
    R, t = sensor_to_enu(scene.origin, pose)
    center = R.T @ (np.asarray(obj.center) - t)
    heading = R.T @ np.array([math.cos(obj.yaw), math.sin(obj.yaw), 0.0])
    return DetectionBox.at(tuple(center), obj.size, math.atan2(heading[1], heading[0]), 1.0)


def vehicle_pose(origin: GeodeticCoord, x: float, y: float, yaw: float,
                 install_translation=(0.0, 0.0, SENSOR_HEIGHT),
                 install_yaw: float = 0.0) -> VehiclePose:
    return pose_from_enu(origin, (x, y, 0.0), yaw, install_translation=install_translation,
                         install_rotation=EulerAngles(install_yaw, 0.0, 0.0))


# --- scenario construction -------------------------------------------------

VARIANTS = ("moderate", "hard", "easy")


@dataclass(frozen=True)
class Scenario:
    scene: Scene
    pose_a: VehiclePose
    pose_b: VehiclePose
    hidden_id: int
    variant: str = "moderate"
    seed: int = 0
    beams: int = 16

    def sensor(self, which: str) -> SensorModel:
        return SensorModel(self.pose_a if which == "a" else self.pose_b, beams=self.beams)

    def cars(self) -> list[SceneObject]:
        return [o for o in self.scene.objects if o.label == "car"]


def visible_fraction(scene: Scene, sensor: SensorModel, object_id: int) -> float:
    """Share of the returns an object would give on its own that survive occlusion."""
    alone = replace(scene, objects=(scene.get(object_id),))
    n_alone = int((cast_rays(alone, sensor)[2] == object_id).sum())
    if n_alone == 0:
        return 0.0
    return int((cast_rays(scene, sensor)[2] == object_id).sum()) / n_alone


def _bev_angles(origin_xy: np.ndarray, obj: SceneObject) -> tuple[float, float]:
    """Angular span of an object's footprint seen from ``origin_xy``."""
    rel = obj.corners_bev() - origin_xy
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    ref = ang[0]
    ang = ref + np.angle(np.exp(1j * (ang - ref)))
    return float(ang.min()), float(ang.max())


def _blocking_wall(id: int, viewer: np.ndarray, a0: float, a1: float, dist: float) -> SceneObject:
    """Wall perpendicular-ish to the sight line at ``dist`` covering angles [a0, a1]."""
    mid = (a0 + a1) / 2
    normal = np.array([math.cos(mid), math.sin(mid)])
    tangent = np.array([-normal[1], normal[0]])
    p0 = viewer + dist / math.cos(a0 - mid) * np.array([math.cos(a0), math.sin(a0)])
    p1 = viewer + dist / math.cos(a1 - mid) * np.array([math.cos(a1), math.sin(a1)])
    s0, s1 = sorted(((p0 - viewer) @ tangent, (p1 - viewer) @ tangent))
    center = viewer + dist * normal + (s0 + s1) / 2 * tangent
    return wall(id, center[0], center[1], math.atan2(tangent[1], tangent[0]), s1 - s0)


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def _footprint_gap(a: SceneObject, b: SceneObject) -> float:
    """Lower bound on the BEV distance between two footprints (circle approximation)."""
    ra = math.hypot(a.size[0], a.size[1]) / 2
    rb = math.hypot(b.size[0], b.size[1]) / 2
    return math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) - ra - rb


def _transform_scene(objects, heading: float, offset: np.ndarray) -> list[SceneObject]:
    c, s = math.cos(heading), math.sin(heading)
    rot = np.array([[c, -s], [s, c]])
    out = []
    for o in objects:
        xy = rot @ np.asarray(o.center[:2]) + offset
        out.append(replace(o, center=(xy[0], xy[1], o.center[2]), yaw=o.yaw + heading))
    return out


def _draft(rng: np.random.Generator, variant: str):
    """One candidate layout in a frame where vehicle A sits at the origin facing +x."""
    a_xy = np.zeros(2)
    hx, hy = rng.uniform(16.0, 24.0), rng.uniform(-2.0, 2.0)
    h_yaw = (math.pi / 2 if variant == "hard" else rng.choice([0.0, math.pi / 2])) + rng.uniform(-0.15, 0.15)
    hidden = car(1, hx, hy, h_yaw)
    objects = [hidden]
    wall_at = rng.uniform(8.0, 11.0)

    if variant == "hard":
        b_xy = np.array([rng.uniform(-2.0, 2.0), rng.choice([-1, 1]) * rng.uniform(7.0, 10.0)])
        lo_a, hi_a = _bev_angles(a_xy, hidden)
        lo_b, hi_b = _bev_angles(b_xy, hidden)
        keep = rng.uniform(0.3, 0.4)
        # A keeps the high-angle end of its view, B the low-angle end or vice versa
        if b_xy[1] > 0:
            wall_a = (lo_a - 0.1, hi_a - keep * (hi_a - lo_a))
            wall_b = (lo_b + keep * (hi_b - lo_b), hi_b + 0.1)
        else:
            wall_a = (lo_a + keep * (hi_a - lo_a), hi_a + 0.1)
            wall_b = (lo_b - 0.1, hi_b - keep * (hi_b - lo_b))
        objects.append(_blocking_wall(2, a_xy, *wall_a, wall_at))
        objects.append(_blocking_wall(3, b_xy, *wall_b, np.linalg.norm([hx, hy] - b_xy) * wall_at / hx))
    else:
        bearing = rng.choice([-1, 1]) * rng.uniform(math.radians(60), math.radians(120))
        b_xy = np.array([hx, hy]) + rng.uniform(10.0, 15.0) * np.array([math.cos(bearing), math.sin(bearing)])
        if variant == "moderate":
            lo, hi = _bev_angles(a_xy, hidden)
            objects.append(_blocking_wall(2, a_xy, lo - 0.1, hi + 0.1, wall_at))

    # bystanders, clear of the sight lines to the hidden car
    next_id = 10
    for _ in range(int(rng.integers(1, 4))):
        for _attempt in range(20):
            cand = car(next_id, rng.uniform(-15, 30), rng.uniform(-20, 20), rng.uniform(-math.pi, math.pi))
            xy = np.asarray(cand.center[:2])
            clear = (
                min(np.linalg.norm(xy - a_xy), np.linalg.norm(xy - b_xy)) > 6.0
                and min(_segment_distance(xy, v, np.array([hx, hy])) for v in (a_xy, b_xy)) > 5.0
                and all(_footprint_gap(cand, o) > 3.0 for o in objects)
            )
            if clear:
                objects.append(cand)
                next_id += 1
                break
    b_yaw = math.atan2(hy - b_xy[1], hx - b_xy[0]) + rng.uniform(-0.3, 0.3)
    return objects, b_xy, b_yaw


def make_occlusion_scenario(seed: int, variant: str = "moderate", beams: int = 16,
                            origin: GeodeticCoord = DEFAULT_ORIGIN) -> Scenario:
    """Two vehicles and a hidden car whose visibility depends on ``variant``.

    * ``moderate``: a wall hides the car from A; B has a clear view.
    * ``hard``: walls hide complementary parts of the car so each vehicle sees
      well under half of it.
    * ``easy``: no occluder; both see the car.

    Candidate layouts are drawn from ``seed`` and checked with the ray caster
    until one satisfies the variant's visibility contract.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    rng = np.random.default_rng([seed, VARIANTS.index(variant)])
    for _attempt in range(50):
        local, b_xy, b_yaw = _draft(rng, variant)
        heading = rng.uniform(-math.pi, math.pi)
        offset = rng.uniform(-20.0, 20.0, size=2)
        c, s = math.cos(heading), math.sin(heading)
        rot = np.array([[c, -s], [s, c]])
        a_world = offset
        b_world = rot @ b_xy + offset
        scene = Scene(tuple(_transform_scene(local, heading, offset)), origin=origin)
        pose_a = vehicle_pose(origin, *a_world, heading + rng.uniform(-0.2, 0.2),
                              install_translation=(rng.uniform(-0.5, 0.5), 0.0, SENSOR_HEIGHT))
        pose_b = vehicle_pose(origin, *b_world, b_yaw + heading,
                              install_translation=(rng.uniform(-0.5, 0.5), 0.0, SENSOR_HEIGHT))
        scenario = Scenario(scene, pose_a, pose_b, 1, variant, seed, beams)
        fa = visible_fraction(scene, scenario.sensor("a"), 1)
        fb = visible_fraction(scene, scenario.sensor("b"), 1)
        if variant == "moderate" and fa == 0.0 and fb > 0.95:
            return scenario
        if variant == "easy" and fa > 0.95 and fb > 0.95:
            return scenario
        if variant == "hard" and 0.2 < fa < 0.42 and 0.2 < fb < 0.42 and fa + fb > 0.6:
            return scenario
    raise RuntimeError(f"no valid {variant} layout for seed {seed}")


def make_suite(n: int, seed: int = 0, beams: int = 16) -> list[Scenario]:
    """``n`` scenarios cycling through the moderate, hard and easy variants."""
    return [make_occlusion_scenario(seed * 100003 + i, VARIANTS[i % 3], beams) for i in range(n)]


def make_grid_world(seed: int, beams: int = 16, origin: GeodeticCoord = DEFAULT_ORIGIN) -> Scenario:
    """Street-grid world: every box and both vehicles head along a multiple of 90 degrees.

    Surfaces are then normal to the sensor axes of both vehicles.
    """
    rng = np.random.default_rng([seed, 7])
    quarter = lambda: float(rng.integers(0, 4)) * math.pi / 2  # noqa: E731
    a_xy = np.zeros(2)
    b_xy = rng.uniform(-25, 25, size=2)
    objects: list[SceneObject] = []
    for i in range(int(rng.integers(4, 9))):
        for _attempt in range(30):
            xy = rng.uniform(-35, 35, size=2)
            obj = (car(i + 1, *xy, quarter()) if rng.random() < 0.7
                   else wall(i + 1, *xy, quarter(), rng.uniform(3, 12)))
            if (min(np.linalg.norm(xy - a_xy), np.linalg.norm(xy - b_xy)) > 7.0
                    and all(_footprint_gap(obj, o) > 1.0 for o in objects)):
                objects.append(obj)
                break
    scene = Scene(tuple(objects), origin=origin)
    pose_a = vehicle_pose(origin, *a_xy, quarter())
    pose_b = vehicle_pose(origin, *b_xy, quarter())
    return Scenario(scene, pose_a, pose_b, objects[0].id if objects else -1, "grid", seed, beams)


def surface_distance(scene: Scene, world_xyz: np.ndarray) -> np.ndarray:
    """Distance from each world point to the nearest box face or the ground plane."""
    pts = np.asarray(world_xyz, dtype=float).reshape(-1, 3)
    best = np.full(len(pts), np.inf)
    if scene.ground_height is not None:
        best = np.abs(pts[:, 2] - scene.ground_height)
    for obj in scene.objects:
        c, s = math.cos(obj.yaw), math.sin(obj.yaw)
        to_local = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
        q = (pts - np.asarray(obj.center)) @ to_local.T
        half = np.asarray(obj.size) / 2
        outside = np.maximum(np.abs(q) - half, 0.0)
        d_out = np.linalg.norm(outside, axis=1)
        d_in = np.min(half - np.abs(q), axis=1)
        d = np.where(d_out > 0, d_out, np.abs(d_in))
        best = np.minimum(best, d)
    return best


# --- JSON scene description -----------------------------------------------

def pose_to_dict(pose: VehiclePose) -> dict:
    return {
        "gps": {"lat": pose.gps.latitude, "lon": pose.gps.longitude, "alt": pose.gps.altitude},
        "imu_deg": dict(zip(("yaw", "pitch", "roll"), pose.imu.to_degrees())),
        "install_translation": list(pose.install_translation),
        "install_rotation_deg": dict(zip(("yaw", "pitch", "roll"), pose.install_rotation.to_degrees())),
    }


def pose_from_dict(d: dict) -> VehiclePose:
    imu = d.get("imu_deg", {})
    inst = d.get("install_rotation_deg", {})
    return VehiclePose(
        gps=GeodeticCoord(d["gps"]["lat"], d["gps"]["lon"], d["gps"].get("alt", 0.0)),
        imu=EulerAngles.from_degrees(imu.get("yaw", 0.0), imu.get("pitch", 0.0), imu.get("roll", 0.0)),
        install_translation=tuple(d.get("install_translation", (0.0, 0.0, 0.0))),
        install_rotation=EulerAngles.from_degrees(inst.get("yaw", 0.0), inst.get("pitch", 0.0), inst.get("roll", 0.0)),
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    scene = scenario.scene
    return {
        "origin": {"lat": scene.origin.latitude, "lon": scene.origin.longitude, "alt": scene.origin.altitude},
        "ground_height": scene.ground_height,
        "extent": scene.extent,
        "objects": [
            {"id": o.id, "label": o.label, "center": list(o.center), "size": list(o.size),
             "yaw_deg": math.degrees(o.yaw)}
            for o in scene.objects
        ],
        "vehicles": {"A": pose_to_dict(scenario.pose_a), "B": pose_to_dict(scenario.pose_b)},
        "sensor": {"beams": scenario.beams},
        "hidden_id": scenario.hidden_id,
        "variant": scenario.variant,
        "seed": scenario.seed,
    }


def scenario_from_dict(d: dict) -> Scenario:
    o = d["origin"]
    origin = GeodeticCoord(o["lat"], o["lon"], o.get("alt", 0.0))
    objects = tuple(
        SceneObject(int(x["id"]), x["label"], tuple(x["center"]), tuple(x["size"]), math.radians(x.get("yaw_deg", 0.0)))
        for x in d.get("objects", [])
    )
    scene = Scene(objects, d.get("ground_height", 0.0), d.get("extent", 200.0), origin)
    return Scenario(
        scene,
        pose_from_dict(d["vehicles"]["A"]),
        pose_from_dict(d["vehicles"]["B"]),
        int(d.get("hidden_id", -1)),
        d.get("variant", "custom"),
        int(d.get("seed", 0)),
        int(d.get("sensor", {}).get("beams", 16)),
    )


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n")


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
