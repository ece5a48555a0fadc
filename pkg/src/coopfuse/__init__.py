"""Cooperative perception for connected vehicles: exchange, align and fuse LiDAR frames."""

from .codec import ExchangePackage, make_package, parse_package, serialize_package
from .detect import DetectionBox, DetectorParams, Difficulty, DistanceBand, detect
from .fusion import FusedCloud, fuse, fuse_clouds
from .geometry import EulerAngles, GeodeticCoord, VehiclePose, relative_pose, rotation_matrix
from .pointcloud import PointCloud, load_kitti_bin, save_kitti_bin
from .roi import BoxRegion, ForwardCone, FovSector, FullFrame, extract_roi

__version__ = "0.1.0"

__all__ = [
    "BoxRegion",
    "DetectionBox",
    "DetectorParams",
    "Difficulty",
    "DistanceBand",
    "EulerAngles",
    "ExchangePackage",
    "ForwardCone",
    "FovSector",
    "FullFrame",
    "FusedCloud",
    "GeodeticCoord",
    "PointCloud",
    "VehiclePose",
    "detect",
    "extract_roi",
    "fuse",
    "fuse_clouds",
    "load_kitti_bin",
    "make_package",
    "parse_package",
    "relative_pose",
    "rotation_matrix",
    "save_kitti_bin",
    "serialize_package",
]
