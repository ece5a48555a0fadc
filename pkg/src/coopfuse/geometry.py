"""Rigid-body math for aligning two vehicles' LiDAR frames.

Conventions used throughout the package:

* Rotations act on column vectors, ``p' = R @ p``.
* ``rotation_matrix`` returns ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
* The local metric frame is East-North-Up (ENU) on the WGS-84 ellipsoid,
  yaw is counter-clockwise from East.
* Vehicle body frame: x forward, y left, z up, origin on the ground below
  the GPS antenna.  The LiDAR pose in the body frame is the installation
  extrinsic (``install_rotation`` then ``install_translation``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# WGS-84
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


class InvalidAngleError(ValueError):
    pass


class InvalidCoordinateError(ValueError):
    pass


def normalize_angle(angle: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    a = math.fmod(angle, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class EulerAngles:
    """Yaw, pitch, roll in radians, each wrapped to (-pi, pi]."""

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self) -> None:
        for name in ("yaw", "pitch", "roll"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidAngleError(f"{name} is not finite: {value!r}")
            object.__setattr__(self, name, normalize_angle(value))

    @classmethod
    def from_degrees(cls, yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> EulerAngles:
        return cls(math.radians(yaw), math.radians(pitch), math.radians(roll))

    def to_degrees(self) -> tuple[float, float, float]:
        return math.degrees(self.yaw), math.degrees(self.pitch), math.degrees(self.roll)


@dataclass(frozen=True)
class GeodeticCoord:
    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self) -> None:
        for name in ("latitude", "longitude", "altitude"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidCoordinateError(f"{name} is not finite: {value!r}")
            object.__setattr__(self, name, value)
        if abs(self.latitude) > 90.0:
            raise InvalidCoordinateError(f"latitude out of range: {self.latitude}")
        if abs(self.longitude) > 180.0:
            raise InvalidCoordinateError(f"longitude out of range: {self.longitude}")


def _vec3(values, name: str) -> tuple[float, float, float]:
    out = tuple(float(v) for v in values)
    if len(out) != 3 or not all(math.isfinite(v) for v in out):
        raise ValueError(f"{name} must be 3 finite numbers, got {values!r}")
    return out  # type: ignore[return-value]


@dataclass(frozen=True)
class VehiclePose:
    """Everything a receiver needs to place a sender's points.

    ``gps`` locates the body origin, ``imu`` is the body attitude relative to
    the local ENU frame at ``gps``, and the install fields place the LiDAR
    in the body frame.
    """

    gps: GeodeticCoord
    imu: EulerAngles = field(default_factory=EulerAngles)
    install_translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    install_rotation: EulerAngles = field(default_factory=EulerAngles)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "install_translation", _vec3(self.install_translation, "install_translation")
        )


def _rz(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(b: float) -> np.ndarray:
    c, s = math.cos(b), math.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rx(g: float) -> np.ndarray:
    c, s = math.cos(g), math.sin(g)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_matrix(angles: EulerAngles) -> np.ndarray:
    """Return ``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` as a 3x3 float64 array."""
    if not isinstance(angles, EulerAngles):
        angles = EulerAngles(*angles)
    return _rz(angles.yaw) @ _ry(angles.pitch) @ _rx(angles.roll)


def euler_from_matrix(R: np.ndarray) -> EulerAngles:
    """Inverse of :func:`rotation_matrix` (pitch in [-pi/2, pi/2])."""
    R = np.asarray(R, dtype=float)
    pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        yaw = math.atan2(R[1, 0], R[0, 0])
        roll = math.atan2(R[2, 1], R[2, 2])
    else:
        # gimbal lock: fold everything into yaw
        yaw = math.atan2(-R[0, 1], R[1, 1])
        roll = 0.0
    return EulerAngles(yaw, pitch, roll)


def transform_point(R: np.ndarray, d, p) -> np.ndarray:
    """Return ``R @ p + d``.  ``p`` may be a single 3-vector or an (N, 3) array."""
    R = np.asarray(R, dtype=float)
    d = np.asarray(d, dtype=float)
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return R @ p + d
    return p @ R.T + d


def invert_transform(R: np.ndarray, d) -> tuple[np.ndarray, np.ndarray]:
    R = np.asarray(R, dtype=float)
    return R.T, -(R.T @ np.asarray(d, dtype=float))


def geodetic_to_ecef(coord: GeodeticCoord) -> np.ndarray:
    lat = math.radians(coord.latitude)
    lon = math.radians(coord.longitude)
    sin_lat = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return np.array(
        [
            (n + coord.altitude) * math.cos(lat) * math.cos(lon),
            (n + coord.altitude) * math.cos(lat) * math.sin(lon),
            (n * (1.0 - WGS84_E2) + coord.altitude) * sin_lat,
        ]
    )


def ecef_to_geodetic(xyz) -> GeodeticCoord:
    x, y, z = (float(v) for v in xyz)
    lon = math.atan2(y, x)
    p = math.hypot(x, y)
    lat = math.atan2(z, p * (1.0 - WGS84_E2))
    alt = 0.0
    for _ in range(10):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        alt = p / math.cos(lat) - n
        new_lat = math.atan2(z, p * (1.0 - WGS84_E2 * n / (n + alt)))
        if abs(new_lat - lat) < 1e-15:
            lat = new_lat
            break
        lat = new_lat
    sin_lat = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    alt = p / math.cos(lat) - n
    return GeodeticCoord(math.degrees(lat), math.degrees(lon), alt)


def enu_basis(coord: GeodeticCoord) -> np.ndarray:
    """Rotation taking ENU vectors at ``coord`` to ECEF vectors."""
    lat = math.radians(coord.latitude)
    lon = math.radians(coord.longitude)
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array(
        [
            [-so, -sl * co, cl * co],
            [co, -sl * so, cl * so],
            [0.0, cl, sl],
        ]
    )


def geodetic_to_enu(origin: GeodeticCoord, point: GeodeticCoord) -> np.ndarray:
    """ENU offset in meters of ``point`` on the tangent plane at ``origin``."""
    delta = geodetic_to_ecef(point) - geodetic_to_ecef(origin)
    return enu_basis(origin).T @ delta


def enu_to_geodetic(origin: GeodeticCoord, enu) -> GeodeticCoord:
    return ecef_to_geodetic(geodetic_to_ecef(origin) + enu_basis(origin) @ np.asarray(enu, float))


def sensor_to_enu(origin: GeodeticCoord, pose: VehiclePose) -> tuple[np.ndarray, np.ndarray]:
    """Pose of a vehicle's LiDAR in the ENU frame anchored at ``origin``.

    Returns ``(R, t)`` such that ``R @ p_sensor + t`` is the ENU position.
    The IMU attitude is taken relative to the vehicle's own local level
    frame and carried over to ``origin``'s frame through ECEF.
    """
    local_to_origin = enu_basis(origin).T @ enu_basis(pose.gps)
    r_body = local_to_origin @ rotation_matrix(pose.imu)
    r_sensor = r_body @ rotation_matrix(pose.install_rotation)
    t_sensor = geodetic_to_enu(origin, pose.gps) + r_body @ np.asarray(pose.install_translation)
    return r_sensor, t_sensor


def relative_pose(receiver: VehiclePose, transmitter: VehiclePose) -> tuple[np.ndarray, np.ndarray]:
    """Transform mapping transmitter LiDAR coordinates into the receiver LiDAR frame.

    ``R = R_recv^T R_trans`` and ``d`` is the transmitter LiDAR center seen from
    the receiver LiDAR, both computed in the ENU frame at the receiver's GPS.
    Installation extrinsics of both vehicles are included. Identical poses give
    an exact identity, so self-fusion does not jitter points across voxel edges.
    """
    if receiver == transmitter:
        return np.eye(3), np.zeros(3)
    r_recv, t_recv = sensor_to_enu(receiver.gps, receiver)
    r_trans, t_trans = sensor_to_enu(receiver.gps, transmitter)
    R = r_recv.T @ r_trans
    d = r_recv.T @ (t_trans - t_recv)
    return R, d


def pose_from_enu(
    origin: GeodeticCoord,
    position,
    yaw: float,
    pitch: float = 0.0,
    roll: float = 0.0,
    install_translation=(0.0, 0.0, 0.0),
    install_rotation: EulerAngles | None = None,
) -> VehiclePose:
    """Build a :class:`VehiclePose` for a body placed at ``position`` in ``origin``'s ENU frame.

    The attitude ``(yaw, pitch, roll)`` is given in ``origin``'s frame and
    converted to the vehicle's own local level frame, which is what an IMU
    would report.
    """
    gps = enu_to_geodetic(origin, position)
    origin_to_local = enu_basis(gps).T @ enu_basis(origin)
    attitude = origin_to_local @ rotation_matrix(EulerAngles(yaw, pitch, roll))
    return VehiclePose(
        gps=gps,
        imu=euler_from_matrix(attitude),
        install_translation=tuple(install_translation),
        install_rotation=install_rotation or EulerAngles(),
    )
