"""Salient ground features for localization: MC-IPM, SGF detection/description,
loop closure and SE(2) pose-graph optimization, plus a synthetic world."""

__version__ = "0.1.0"

from .camera import (  # noqa: E402
    CameraModel,
    MotionState,
    PoseQueue,
    VirtualCamera,
    compensation_from_queue,
    default_camera,
    default_virtual_camera,
    pixel_to_ground,
    warp_mask_to_bev,
)
from .geometry import Pose6, Se2  # noqa: E402

__all__ = [
    "CameraModel",
    "MotionState",
    "PoseQueue",
    "Pose6",
    "Se2",
    "VirtualCamera",
    "compensation_from_queue",
    "default_camera",
    "default_virtual_camera",
    "pixel_to_ground",
    "warp_mask_to_bev",
]
