"""Merge a transmitter's cloud into the receiver's LiDAR frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import ExchangePackage, make_package
from .geometry import VehiclePose, relative_pose, rotation_matrix, transform_point
from .pointcloud import PointCloud, voxel_downsample

DEFAULT_DEDUP_LEAF = 0.05


@dataclass(frozen=True, eq=False)
class FusedCloud:
    """Fused points plus provenance.

    ``source`` marks each output point 0 (receiver) or 1 (transmitter); a
    deduplicated voxel holding points from both counts as receiver.
    """

    cloud: PointCloud
    source_counts: tuple[int, int]
    transform_used: tuple[np.ndarray, np.ndarray]
    source: np.ndarray

    def observer_origins(self) -> np.ndarray:
        """Per-point position of the LiDAR that observed it, in the receiver frame."""
        viewpoints = np.stack([np.zeros(3), np.asarray(self.transform_used[1], dtype=float)])
        return viewpoints[self.source]

    @property
    def receiver_count(self) -> int:
        return self.source_counts[0]

    @property
    def transmitter_count(self) -> int:
        return self.source_counts[1]


def apply_install_extrinsic(cloud: PointCloud, pose: VehiclePose) -> PointCloud:
    """Map sensor-frame points into the vehicle body frame."""
    R = rotation_matrix(pose.install_rotation)
    return cloud.with_xyz(transform_point(R, pose.install_translation, cloud.xyz))


def fuse_clouds(
    receiver_cloud: PointCloud,
    receiver_pose: VehiclePose,
    transmitter_cloud: PointCloud,
    transmitter_pose: VehiclePose,
    dedup_leaf: float | None = None,
) -> FusedCloud:
    """Union of the receiver cloud and the transmitter cloud mapped by :func:`relative_pose`.

    This is the codec-free path; :func:`fuse` decodes a package and calls it.
    """
    R, d = relative_pose(receiver_pose, transmitter_pose)
    mapped = transform_point(R, d, transmitter_cloud.xyz)
    merged = PointCloud(
        np.concatenate([receiver_cloud.xyz, mapped]),
        np.concatenate([receiver_cloud.reflectance, transmitter_cloud.reflectance]),
        receiver_cloud.beam_count,
        receiver_cloud.frame_id,
    )
    source = np.repeat(np.array([0, 1], dtype=np.int64), [len(receiver_cloud), len(transmitter_cloud)])
    if dedup_leaf is not None:
        merged, inverse = voxel_downsample(merged, dedup_leaf, return_inverse=True)
        voxel_source = np.ones(len(merged), dtype=np.int64)
        np.minimum.at(voxel_source, inverse, source)
        source = voxel_source
    return FusedCloud(merged, (len(receiver_cloud), len(transmitter_cloud)), (R, d), source)


def fuse(
    receiver_cloud: PointCloud,
    receiver_pose: VehiclePose,
    pkg: ExchangePackage,
    dedup_leaf: float | None = None,
) -> FusedCloud:
    return fuse_clouds(receiver_cloud, receiver_pose, pkg.cloud(), pkg.pose, dedup_leaf)


def emulate_two_vehicle_from_sequence(
    frame_t1: PointCloud,
    pose_t1: VehiclePose,
    frame_t2: PointCloud,
    pose_t2: VehiclePose,
    sender_id: int = 1,
) -> tuple[tuple[PointCloud, VehiclePose], ExchangePackage]:
    """Treat two frames of one moving vehicle as two cooperating vehicles.

    The earlier frame becomes the transmitter's package and the later frame
    the receiver's own scan.
    """
    return (frame_t2, pose_t2), make_package(frame_t1, pose_t1, sender_id=sender_id)
