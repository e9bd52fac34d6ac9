"""Online multi-object tracking, mapping and shape reconstruction from monocular detections."""
from .config import RunConfig, load_config
from .detection import Detection, FrameInput, load_sequence
from .geometry import Box2, CameraIntrinsics, OrientedBox3, Pose, Scale, giou3d, iou3d
from .tracks import MapState, step

__all__ = [
    "Box2", "CameraIntrinsics", "Detection", "FrameInput", "MapState", "OrientedBox3", "Pose",
    "RunConfig", "Scale", "giou3d", "iou3d", "load_config", "load_sequence", "step",
]
__version__ = "0.1.0"
