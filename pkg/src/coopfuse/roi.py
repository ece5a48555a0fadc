"""Region-of-interest extraction and static background subtraction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .pointcloud import InvalidParameterError, PointCloud, voxel_keys

# boundary points (exactly on a sector or cone edge) are kept
_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class FullFrame:
    pass


@dataclass(frozen=True)
class FovSector:
    """Azimuth sector of ``width`` radians centered on ``center_azimuth`` (CCW from +x)."""

    center_azimuth: float
    width: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.center_azimuth) and 0.0 < self.width <= 2.0 * math.pi):
            raise InvalidParameterError(f"invalid sector: {self}")


@dataclass(frozen=True)
class ForwardCone:
    half_angle: float
    max_range: float

    def __post_init__(self) -> None:
        if not (0.0 < self.half_angle <= math.pi and self.max_range > 0):
            raise InvalidParameterError(f"invalid cone: {self}")


@dataclass(frozen=True)
class BoxRegion:
    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.min_corner)
        hi = tuple(float(v) for v in self.max_corner)
        if len(lo) != 3 or len(hi) != 3 or not all(a < b for a, b in zip(lo, hi)):
            raise InvalidParameterError(f"invalid box: {lo} .. {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)


RoiSpec = Union[FullFrame, FovSector, ForwardCone, BoxRegion]


def parse_roi(text: str) -> RoiSpec:
    """Parse the command-line ROI syntax.

    ``full`` | ``sector:CENTER_DEG:WIDTH_DEG`` | ``cone:HALF_DEG:MAX_RANGE`` |
    ``box:X0,Y0,Z0,X1,Y1,Z1``
    """
    kind, _, rest = text.strip().partition(":")
    kind = kind.lower()
    try:
        if kind == "full" and not rest:
            return FullFrame()
        if kind == "sector":
            center, width = (float(v) for v in rest.split(":"))
            return FovSector(math.radians(center), math.radians(width))
        if kind == "cone":
            half, max_range = (float(v) for v in rest.split(":"))
            return ForwardCone(math.radians(half), max_range)
        if kind == "box":
            vals = [float(v) for v in rest.split(",")]
            if len(vals) == 6:
                return BoxRegion(tuple(vals[:3]), tuple(vals[3:]))
    except ValueError as exc:
        raise InvalidParameterError(f"bad ROI {text!r}: {exc}") from None
    raise InvalidParameterError(f"bad ROI {text!r}")


def roi_mask(xyz: np.ndarray, spec: RoiSpec) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    if isinstance(spec, FullFrame):
        return np.ones(len(xyz), dtype=bool)
    if isinstance(spec, FovSector):
        az = np.arctan2(xyz[:, 1], xyz[:, 0])
        diff = np.abs(np.angle(np.exp(1j * (az - spec.center_azimuth))))
        return diff <= spec.width / 2.0 + _EDGE_EPS
    if isinstance(spec, ForwardCone):
        rng = np.linalg.norm(xyz, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos_angle = np.where(rng > 0, xyz[:, 0] / rng, 1.0)
        angle = np.arccos(np.clip(cos_angle, -1.0, 1.0))
        return (angle <= spec.half_angle + _EDGE_EPS) & (rng <= spec.max_range)
    if isinstance(spec, BoxRegion):
        lo = np.asarray(spec.min_corner)
        hi = np.asarray(spec.max_corner)
        return ((xyz >= lo) & (xyz <= hi)).all(axis=1)
    raise InvalidParameterError(f"unknown ROI spec {spec!r}")


def extract_roi(cloud: PointCloud, spec: RoiSpec) -> PointCloud:
    if isinstance(spec, FullFrame):
        return cloud
    return cloud.subset(roi_mask(cloud.xyz, spec))


@dataclass(frozen=True, eq=False)
class StaticMap:
    """Per-voxel count of how many mapping frames observed that voxel."""

    leaf: float
    keys: np.ndarray  # (M, 3) int64, lexicographically sorted
    counts: np.ndarray  # (M,)
    frames: int

    def __len__(self) -> int:
        return len(self.keys)

    def count_at(self, xyz) -> np.ndarray:
        """Observation count of the voxel containing each point (0 if unseen)."""
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        out = np.zeros(len(xyz), dtype=np.int64)
        if len(self.keys) == 0 or len(xyz) == 0:
            return out
        table = _pack(self.keys)
        order = np.argsort(table)
        table = table[order]
        query = _pack(voxel_keys(xyz, self.leaf))
        pos = np.clip(np.searchsorted(table, query), 0, len(table) - 1)
        hit = table[pos] == query
        out[hit] = self.counts[order[pos[hit]]]
        return out


def _pack(keys: np.ndarray) -> np.ndarray:
    # 21 bits per axis: +-1M voxels, i.e. +-200 km at the default 0.2 m leaf
    k = np.asarray(keys, dtype=np.int64) + (1 << 20)
    return (k[:, 0] << 42) | (k[:, 1] << 21) | k[:, 2]


def build_static_map(frames: list[PointCloud], leaf: float = 0.2) -> StaticMap:
    """Count, per voxel, the frames in which it was occupied.  Frames share one reference frame."""
    if not leaf > 0:
        raise InvalidParameterError(f"leaf must be positive, got {leaf}")
    per_frame = [np.unique(voxel_keys(f.xyz, leaf), axis=0) for f in frames if len(f)]
    if not per_frame:
        return StaticMap(leaf, np.empty((0, 3), np.int64), np.empty(0, np.int64), len(frames))
    keys, counts = np.unique(np.concatenate(per_frame), axis=0, return_counts=True)
    return StaticMap(leaf, keys, counts, len(frames))


def background_subtract(cloud: PointCloud, static_map: StaticMap, min_fraction: float = 0.8) -> PointCloud:
    """Drop points in voxels seen in at least ``min_fraction`` of the mapping frames."""
    if not 0.0 < min_fraction <= 1.0:
        raise InvalidParameterError(f"min_fraction must be in (0, 1], got {min_fraction}")
    if len(static_map) == 0 or static_map.frames == 0:
        return cloud
    fraction = static_map.count_at(cloud.xyz) / static_map.frames
    return cloud.subset(fraction < min_fraction)
