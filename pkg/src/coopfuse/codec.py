"""V2V exchange package: a fixed 128-byte header followed by quantized points.

Point records are 7 bytes: x, y, z as little-endian int16 centimeters and
reflectance as uint8 (``round(r * 255)``).

Header layout (little-endian, 128 bytes)::

    off  size  field
      0     4  magic b"COOP"
      4     2  version (u16) = 1
      6     2  flags (u16); low byte = LiDAR beam count
      8     8  sender_id (u64)
     16     8  timestamp, microseconds since epoch (i64)
     24    48  lat, lon (deg), alt (m), yaw, pitch, roll (rad), f64 each
     72    12  install translation x, y, z (m), f32 each
     84    12  install rotation yaw, pitch, roll (rad), f32 each
     96    20  ROI: tag (u8) + 19 parameter bytes
    116     4  point_count (u32)
    120     8  reserved, zero

ROI tags: 0 full frame; 1 sector (center, width: f64 rad); 2 forward cone
(half angle f64 rad, max range f64 m); 3 box (min xyz, max xyz: i16 cm).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import EulerAngles, GeodeticCoord, VehiclePose
from .pointcloud import PointCloud
from .roi import BoxRegion, ForwardCone, FovSector, FullFrame, RoiSpec

__all__ = [
    "VehiclePose",
    "ExchangePackage",
    "encode_points",
    "decode_points",
    "serialize_package",
    "parse_package",
    "make_package",
    "package_size",
]

MAGIC = b"COOP"
VERSION = 1
HEADER_SIZE = 128
RECORD_SIZE = 7
MAX_CM = 32767

POINT_RECORD = np.dtype([("x", "<i2"), ("y", "<i2"), ("z", "<i2"), ("r", "u1")])
assert POINT_RECORD.itemsize == RECORD_SIZE

_HEADER = struct.Struct("<4sHHQq6d3f3f20sI8x")
assert _HEADER.size == HEADER_SIZE

ROI_FULL, ROI_SECTOR, ROI_CONE, ROI_BOX = range(4)


class CodecError(ValueError):
    pass


class QuantizationRangeError(CodecError):
    pass


class MalformedPayloadError(CodecError):
    pass


class MalformedPackageError(CodecError):
    pass


class BadMagicError(MalformedPackageError):
    pass


class UnsupportedVersionError(MalformedPackageError):
    pass


class PointCountMismatchError(MalformedPackageError):
    pass


def encode_points(cloud: PointCloud) -> bytes:
    cm = np.rint(cloud.xyz * 100.0)
    bad = (np.abs(cm) > MAX_CM).any(axis=1)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise QuantizationRangeError(f"point {idx} at {cloud.xyz[idx].tolist()} exceeds +-327.67 m")
    rec = np.empty(len(cloud), dtype=POINT_RECORD)
    rec["x"], rec["y"], rec["z"] = cm.astype(np.int16).T
    rec["r"] = np.rint(cloud.reflectance * 255.0).astype(np.uint8)
    return rec.tobytes()


def decode_points(payload: bytes, beam_count: int = 64, frame_id: str = "") -> PointCloud:
    if len(payload) % RECORD_SIZE:
        raise MalformedPayloadError(f"payload length {len(payload)} is not a multiple of {RECORD_SIZE}")
    rec = np.frombuffer(payload, dtype=POINT_RECORD)
    xyz = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64) / 100.0
    return PointCloud(xyz, rec["r"].astype(np.float64) / 255.0, beam_count, frame_id)


@dataclass(frozen=True)
class ExchangePackage:
    sender_id: int
    timestamp: int
    pose: VehiclePose
    roi: RoiSpec
    payload: bytes
    beam_count: int = 16

    def __post_init__(self) -> None:
        if len(self.payload) % RECORD_SIZE:
            raise MalformedPayloadError(f"payload length {len(self.payload)} is not a multiple of {RECORD_SIZE}")

    @property
    def point_count(self) -> int:
        return len(self.payload) // RECORD_SIZE

    def cloud(self) -> PointCloud:
        return decode_points(self.payload, self.beam_count, frame_id=f"sender-{self.sender_id}")


def make_package(
    cloud: PointCloud,
    pose: VehiclePose,
    roi: RoiSpec | None = None,
    sender_id: int = 0,
    timestamp: int = 0,
) -> ExchangePackage:
    """Quantize ``cloud`` (already ROI-filtered by the caller) into a package."""
    return ExchangePackage(sender_id, timestamp, pose, roi or FullFrame(), encode_points(cloud), cloud.beam_count)


def package_size(point_count: int) -> int:
    return HEADER_SIZE + RECORD_SIZE * point_count


def _pack_roi(roi: RoiSpec) -> bytes:
    if isinstance(roi, FullFrame):
        body = struct.pack("<B", ROI_FULL)
    elif isinstance(roi, FovSector):
        body = struct.pack("<Bdd", ROI_SECTOR, roi.center_azimuth, roi.width)
    elif isinstance(roi, ForwardCone):
        body = struct.pack("<Bdd", ROI_CONE, roi.half_angle, roi.max_range)
    elif isinstance(roi, BoxRegion):
        cm = np.rint(np.array(roi.min_corner + roi.max_corner) * 100.0)
        if (np.abs(cm) > MAX_CM).any():
            raise QuantizationRangeError(f"box corners exceed +-327.67 m: {roi}")
        body = struct.pack("<B6h", ROI_BOX, *cm.astype(int).tolist())
    else:
        raise CodecError(f"unknown ROI spec {roi!r}")
    return body.ljust(20, b"\0")


def _unpack_roi(raw: bytes) -> RoiSpec:
    tag = raw[0]
    if tag == ROI_FULL:
        return FullFrame()
    if tag == ROI_SECTOR:
        return FovSector(*struct.unpack_from("<dd", raw, 1))
    if tag == ROI_CONE:
        return ForwardCone(*struct.unpack_from("<dd", raw, 1))
    if tag == ROI_BOX:
        vals = [v / 100.0 for v in struct.unpack_from("<6h", raw, 1)]
        return BoxRegion(tuple(vals[:3]), tuple(vals[3:]))
    raise MalformedPackageError(f"unknown ROI tag {tag}")


def serialize_package(pkg: ExchangePackage) -> bytes:
    p = pkg.pose
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        pkg.beam_count & 0xFF,
        pkg.sender_id,
        pkg.timestamp,
        p.gps.latitude,
        p.gps.longitude,
        p.gps.altitude,
        p.imu.yaw,
        p.imu.pitch,
        p.imu.roll,
        *p.install_translation,
        p.install_rotation.yaw,
        p.install_rotation.pitch,
        p.install_rotation.roll,
        _pack_roi(pkg.roi),
        pkg.point_count,
    )
    return header + pkg.payload


def parse_package(data: bytes) -> ExchangePackage:
    if len(data) < HEADER_SIZE:
        raise MalformedPackageError(f"{len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    (magic, version, flags, sender, ts, lat, lon, alt, yaw, pitch, roll,
     tx, ty, tz, iyaw, ipitch, iroll, roi_raw, count) = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    payload = bytes(data[HEADER_SIZE:])
    if len(payload) != count * RECORD_SIZE:
        raise PointCountMismatchError(
            f"header declares {count} points but payload holds {len(payload) / RECORD_SIZE:g}"
        )
    pose = VehiclePose(
        gps=GeodeticCoord(lat, lon, alt),
        imu=EulerAngles(yaw, pitch, roll),
        install_translation=(tx, ty, tz),
        install_rotation=EulerAngles(iyaw, ipitch, iroll),
    )
    beams = flags & 0xFF
    return ExchangePackage(sender, ts, pose, _unpack_roi(roi_raw), payload, beams if beams else 16)
