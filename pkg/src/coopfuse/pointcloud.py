"""Point cloud container, KITTI ``.bin`` IO, voxel downsampling and range images."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

VALID_BEAMS = (16, 32, 64)

# (min, max) elevation in degrees per beam count
ELEVATION_SPAN_DEG = {
    16: (-15.0, 15.0),
    32: (-30.67, 10.67),
    64: (-24.8, 2.0),
}

KITTI_RECORD = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "<f4")])


class MalformedFileError(ValueError):
    pass


class InvalidParameterError(ValueError):
    pass


class Point(NamedTuple):
    x: float
    y: float
    z: float
    reflectance: float


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of points with reflectance.

    Coordinates are held as float64 so that transformed clouds keep
    sub-micrometer precision; the KITTI layout stores them as float32.
    Reflectance outside [0, 1] is clamped and counted in ``clamped``.
    """

    xyz: np.ndarray
    reflectance: np.ndarray
    beam_count: int = 64
    frame_id: str = ""
    clamped: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        xyz = np.array(self.xyz, dtype=np.float64).reshape(-1, 3)
        refl = np.array(self.reflectance, dtype=np.float64).reshape(-1)
        if len(refl) != len(xyz):
            raise ValueError(f"{len(xyz)} points but {len(refl)} reflectance values")
        if self.beam_count not in VALID_BEAMS:
            raise InvalidParameterError(f"beam_count must be one of {VALID_BEAMS}, got {self.beam_count}")
        bad = ~np.isfinite(xyz).all(axis=1) | ~np.isfinite(refl)
        if bad.any():
            raise ValueError(f"non-finite point at index {int(np.flatnonzero(bad)[0])}")
        out_of_range = (refl < 0.0) | (refl > 1.0)
        n_clamped = int(out_of_range.sum())
        if n_clamped:
            log.warning("clamped %d reflectance values to [0, 1]", n_clamped)
            refl = np.clip(refl, 0.0, 1.0)
        xyz.flags.writeable = False
        refl.flags.writeable = False
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "reflectance", refl)
        object.__setattr__(self, "clamped", self.clamped + n_clamped)

    @classmethod
    def empty(cls, beam_count: int = 64, frame_id: str = "") -> PointCloud:
        return cls(np.empty((0, 3)), np.empty(0), beam_count, frame_id)

    @classmethod
    def from_points(cls, points, beam_count: int = 64, frame_id: str = "") -> PointCloud:
        arr = np.asarray(list(points), dtype=np.float64).reshape(-1, 4)
        return cls(arr[:, :3], arr[:, 3], beam_count, frame_id)

    def __len__(self) -> int:
        return len(self.xyz)

    def __iter__(self):
        for (x, y, z), r in zip(self.xyz.tolist(), self.reflectance.tolist()):
            yield Point(x, y, z, r)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            self.beam_count == other.beam_count
            and np.array_equal(self.xyz, other.xyz)
            and np.array_equal(self.reflectance, other.reflectance)
        )

    def subset(self, mask_or_index) -> PointCloud:
        return PointCloud(self.xyz[mask_or_index], self.reflectance[mask_or_index], self.beam_count, self.frame_id)

    def with_xyz(self, xyz: np.ndarray) -> PointCloud:
        return PointCloud(xyz, self.reflectance, self.beam_count, self.frame_id)

    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.xyz, axis=1)

    def stats(self) -> dict:
        """Point count and range summary, handy for comparing sensor densities."""
        r = self.ranges()
        return {
            "points": len(self),
            "beam_count": self.beam_count,
            "max_range": float(r.max()) if len(r) else 0.0,
            "mean_range": float(r.mean()) if len(r) else 0.0,
        }


def concatenate(clouds: list[PointCloud], beam_count: int | None = None, frame_id: str = "") -> PointCloud:
    if not clouds:
        return PointCloud.empty(beam_count or 64, frame_id)
    return PointCloud(
        np.concatenate([c.xyz for c in clouds]),
        np.concatenate([c.reflectance for c in clouds]),
        beam_count or clouds[0].beam_count,
        frame_id or clouds[0].frame_id,
    )


def read_kitti_bin(data: bytes, beam_count: int = 64, frame_id: str = "") -> PointCloud:
    """Decode KITTI velodyne bytes: little-endian float32 (x, y, z, reflectance) records."""
    if len(data) % KITTI_RECORD.itemsize:
        raise MalformedFileError(f"length {len(data)} is not a multiple of {KITTI_RECORD.itemsize}")
    rec = np.frombuffer(data, dtype=KITTI_RECORD)
    arr = np.stack([rec["x"], rec["y"], rec["z"], rec["r"]], axis=1)
    bad = ~np.isfinite(arr).all(axis=1)
    if bad.any():
        raise MalformedFileError(f"non-finite value in record {int(np.flatnonzero(bad)[0])}")
    return PointCloud(arr[:, :3], arr[:, 3], beam_count, frame_id)


def write_kitti_bin(cloud: PointCloud) -> bytes:
    rec = np.empty(len(cloud), dtype=KITTI_RECORD)
    rec["x"], rec["y"], rec["z"] = cloud.xyz.T
    rec["r"] = cloud.reflectance
    return rec.tobytes()


def load_kitti_bin(path: str | Path, beam_count: int = 64) -> PointCloud:
    path = Path(path)
    return read_kitti_bin(path.read_bytes(), beam_count, frame_id=path.stem)


def save_kitti_bin(cloud: PointCloud, path: str | Path) -> None:
    Path(path).write_bytes(write_kitti_bin(cloud))


def voxel_keys(xyz: np.ndarray, leaf: float) -> np.ndarray:
    """Integer voxel indices, shape (N, 3)."""
    return np.floor(np.asarray(xyz) / leaf).astype(np.int64)


def voxel_downsample(cloud: PointCloud, leaf: float, return_inverse: bool = False):
    """Replace the points of each occupied ``leaf``-sized voxel by their centroid.

    Output is sorted by voxel index.  Centroids are clipped to the bounding box
    of their own points so they never migrate into a neighbouring voxel, which
    keeps the operation idempotent.  With ``return_inverse`` the output voxel
    index of every input point is returned too.
    """
    if not leaf > 0:
        raise InvalidParameterError(f"leaf must be positive, got {leaf}")
    if len(cloud) == 0:
        return (cloud, np.empty(0, np.int64)) if return_inverse else cloud
    keys = voxel_keys(cloud.xyz, leaf)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    n = len(uniq)
    sums = np.zeros((n, 3))
    np.add.at(sums, inverse, cloud.xyz)
    lo = np.full((n, 3), np.inf)
    hi = np.full((n, 3), -np.inf)
    np.minimum.at(lo, inverse, cloud.xyz)
    np.maximum.at(hi, inverse, cloud.xyz)
    centroids = np.clip(sums / counts[:, None], lo, hi)
    refl = np.bincount(inverse, weights=cloud.reflectance, minlength=n) / counts
    out = PointCloud(centroids, np.clip(refl, 0.0, 1.0), cloud.beam_count, cloud.frame_id)
    return (out, inverse) if return_inverse else out


@dataclass(frozen=True, eq=False)
class RangeImage:
    """Spherical projection; empty cells hold NaN."""

    ranges: np.ndarray
    reflectance: np.ndarray
    elevation_span: tuple[float, float]
    skipped: int = 0

    @property
    def rows(self) -> int:
        return self.ranges.shape[0]

    @property
    def cols(self) -> int:
        return self.ranges.shape[1]

    def occupied(self) -> np.ndarray:
        return ~np.isnan(self.ranges)


def spherical_project(
    cloud: PointCloud,
    rows: int,
    cols: int,
    elevation_span: tuple[float, float] | None = None,
) -> RangeImage:
    """Project onto a (rows x cols) range image; the nearest point wins each cell.

    Column 0 starts at azimuth 0 (+x) and columns advance counter-clockwise.
    Row 0 is the highest elevation.  Elevations outside the span are clamped
    to the edge rows; zero-norm points are skipped and counted.
    """
    if rows < 1 or cols < 1:
        raise InvalidParameterError("rows and cols must be >= 1")
    span_deg = elevation_span or ELEVATION_SPAN_DEG[cloud.beam_count]
    el_min, el_max = (math.radians(v) for v in span_deg)
    ranges = np.full((rows, cols), np.nan)
    refl = np.full((rows, cols), np.nan)

    rng = cloud.ranges()
    valid = rng > 0
    skipped = int((~valid).sum())
    xyz = cloud.xyz[valid]
    rng = rng[valid]
    if len(rng):
        az = np.mod(np.arctan2(xyz[:, 1], xyz[:, 0]), 2.0 * math.pi)
        col = np.floor(az / (2.0 * math.pi) * cols).astype(np.int64) % cols
        el = np.arcsin(np.clip(xyz[:, 2] / rng, -1.0, 1.0))
        row = np.floor((el_max - el) / (el_max - el_min) * rows).astype(np.int64)
        row = np.clip(row, 0, rows - 1)
        cell = row * cols + col
        order = np.lexsort((rng, cell))
        first = np.unique(cell[order], return_index=True)[1]
        winners = order[first]
        ranges.flat[cell[winners]] = rng[winners]
        refl.flat[cell[winners]] = cloud.reflectance[valid][winners]
    return RangeImage(ranges, refl, tuple(span_deg), skipped)
