"""Rigid scene flow toolkit for LIDAR scans: motion algebra, voxelization,
decoding, losses, baselines, mixed-reality augmentation and evaluation."""

from rigidflow.pcio import PointCloud, TriangleMesh
from rigidflow.rigidmotion import PlanarRigidMotion, RigidMotion3D, local_to_world, world_to_local
from rigidflow.voxelgrid import GridSpec, voxelize

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "PlanarRigidMotion",
    "PointCloud",
    "RigidMotion3D",
    "TriangleMesh",
    "local_to_world",
    "voxelize",
    "world_to_local",
]
