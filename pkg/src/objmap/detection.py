"""Per-frame detection records, their lifting to 3D, and sequence file I/O.

A detection carries what a monocular 3D detector head predicts: a 2D box, the
pixel offset from the box centre to the projected 3D centre, a depth, two
viewpoint class bins, metric extents and optionally a 64-d shape code.

Canonical object axes: +x forward, +y left, +z up. The elevation rotation also
carries the fixed tilt that maps object up (+z) onto camera up (-y), so an
upright object seen by a level camera has zero elevation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from ._validation import CODE_DIM, check_code
from .geometry import Box2, CameraIntrinsics, OrientedBox3, Pose, Scale, rot_x, rot_z

N_AZIMUTH_BINS = 36
N_ELEVATION_BINS = 10


class SequenceFormatError(ValueError):
    """Malformed input file; ``lineno`` is 1-based when known."""

    def __init__(self, message: str, path=None, lineno: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class ViewpointBins:
    """Bin layout for azimuth/elevation classification (angles in degrees)."""

    n_azimuth: int = N_AZIMUTH_BINS
    n_elevation: int = N_ELEVATION_BINS
    elevation_min: float = -45.0
    elevation_max: float = 45.0

    @property
    def azimuth_step(self) -> float:
        return 360.0 / self.n_azimuth

    @property
    def elevation_step(self) -> float:
        return (self.elevation_max - self.elevation_min) / self.n_elevation

    def azimuth_deg(self, b: int) -> float:
        return (b + 0.5) * self.azimuth_step

    def elevation_deg(self, b: int) -> float:
        return self.elevation_min + (b + 0.5) * self.elevation_step


DEFAULT_BINS = ViewpointBins()


@dataclass(frozen=True, eq=False)
class Detection:
    frame_id: int
    class_label: str
    score: float
    box2d: Box2
    offset: tuple[float, float]
    depth: float
    azimuth_bin: int
    elevation_bin: int
    scale: Scale
    shape_code: np.ndarray | None = None

    def __post_init__(self):
        if not (self.depth > 0 and math.isfinite(self.depth)):
            raise ValueError(f"depth must be positive, got {self.depth}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if not 0 <= self.azimuth_bin < N_AZIMUTH_BINS:
            raise ValueError(f"azimuth_bin {self.azimuth_bin} outside [0, {N_AZIMUTH_BINS})")
        if not 0 <= self.elevation_bin < N_ELEVATION_BINS:
            raise ValueError(f"elevation_bin {self.elevation_bin} outside [0, {N_ELEVATION_BINS})")
        if self.shape_code is not None:
            code = check_code(self.shape_code)
            code.setflags(write=False)
            object.__setattr__(self, "shape_code", code)
        object.__setattr__(self, "offset", (float(self.offset[0]), float(self.offset[1])))

    def to_json(self) -> dict:
        rec = {
            "frame": int(self.frame_id),
            "class": self.class_label,
            "score": float(self.score),
            "box2d": [float(v) for v in self.box2d.as_list()],
            "offset": list(self.offset),
            "depth": float(self.depth),
            "azi_bin": int(self.azimuth_bin),
            "ele_bin": int(self.elevation_bin),
            "scale": [float(v) for v in self.scale.as_array()],
        }
        if self.shape_code is not None:
            rec["code"] = [float(v) for v in self.shape_code]
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "Detection":
        code = rec.get("code")
        return cls(
            frame_id=int(rec["frame"]),
            class_label=str(rec["class"]),
            score=float(rec.get("score", 1.0)),
            box2d=Box2(*(float(v) for v in rec["box2d"])),
            offset=tuple(float(v) for v in rec.get("offset", (0.0, 0.0))),
            depth=float(rec["depth"]),
            azimuth_bin=_as_int(rec["azi_bin"], "azi_bin"),
            elevation_bin=_as_int(rec["ele_bin"], "ele_bin"),
            scale=Scale.from_array(rec["scale"]),
            shape_code=None if code is None else np.asarray(code, dtype=float),
        )


def _as_int(v, name):
    if isinstance(v, bool) or int(v) != v:
        raise ValueError(f"{name} must be an integer, got {v!r}")
    return int(v)


@dataclass(frozen=True, eq=False)
class FrameInput:
    frame_id: int
    timestamp: float
    T_wc: Pose
    intrinsics: CameraIntrinsics
    detections: list[Detection] = field(default_factory=list)

    @property
    def T_cw(self) -> Pose:
        return self.T_wc.inverse()


def back_project(d: Detection, K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame object centre from box centre, offset and depth."""
    if not d.depth > 0:
        raise ValueError("depth must be positive")
    x2d, y2d = d.box2d.center
    z = d.depth
    return np.array([
        (x2d + d.offset[0] - K.cx) / K.fx * z,
        (y2d + d.offset[1] - K.cy) / K.fy * z,
        z,
    ])


def decode_viewpoint(azimuth_bin: int, elevation_bin: int, bins: ViewpointBins = DEFAULT_BINS) -> np.ndarray:
    """Object-to-camera rotation ``R_ele @ R_azi`` at the bin centres."""
    if not 0 <= azimuth_bin < bins.n_azimuth:
        raise ValueError(f"azimuth bin {azimuth_bin} out of range")
    if not 0 <= elevation_bin < bins.n_elevation:
        raise ValueError(f"elevation bin {elevation_bin} out of range")
    azi = math.radians(bins.azimuth_deg(azimuth_bin))
    ele = math.radians(bins.elevation_deg(elevation_bin))
    R_azi = rot_z(azi)
    R_ele = rot_x(math.pi / 2 + ele)
    return R_ele @ R_azi


def viewpoint_angles(R_co) -> tuple[float, float]:
    """Inverse of the viewpoint parameterisation: ``(azimuth, elevation)`` in radians.

    Roll that the parameterisation cannot express is discarded.
    """
    M = rot_x(-math.pi / 2) @ np.asarray(R_co, dtype=float)
    azi = math.atan2(-M[0, 1], M[0, 0])
    ele = math.atan2(-M[1, 2], M[2, 2])
    return azi % (2 * math.pi), ele


def encode_viewpoint(R_co, bins: ViewpointBins = DEFAULT_BINS) -> tuple[int, int]:
    """Nearest azimuth and elevation bins for an object-to-camera rotation."""
    azi, ele = viewpoint_angles(R_co)
    a = int(math.floor(math.degrees(azi) / bins.azimuth_step)) % bins.n_azimuth
    e = int(math.floor((math.degrees(ele) - bins.elevation_min) / bins.elevation_step))
    return a, min(max(e, 0), bins.n_elevation - 1)


def to_box3(d: Detection, K: CameraIntrinsics, bins: ViewpointBins = DEFAULT_BINS) -> OrientedBox3:
    pose = Pose(decode_viewpoint(d.azimuth_bin, d.elevation_bin, bins), back_project(d, K))
    return OrientedBox3(pose, d.scale, "camera")


# ---------------------------------------------------------------------------
# file formats


def read_intrinsics(path) -> CameraIntrinsics:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) != 1:
        raise SequenceFormatError("expected a single line 'fx fy cx cy'", path)
    try:
        fx, fy, cx, cy = (float(v) for v in lines[0].split())
        return CameraIntrinsics(fx, fy, cx, cy)
    except ValueError as exc:
        raise SequenceFormatError(str(exc), path, 1) from None


def write_intrinsics(path, K: CameraIntrinsics) -> None:
    Path(path).write_text(f"{K.fx!r} {K.fy!r} {K.cx!r} {K.cy!r}\n")


def read_poses(path) -> dict[int, Pose]:
    """``frame tx ty tz qx qy qz qw`` per line, camera-to-world."""
    path = Path(path)
    poses: dict[int, Pose] = {}
    last = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise SequenceFormatError(f"expected 8 columns, got {len(parts)}", path, lineno)
        try:
            frame = int(parts[0])
            t = np.array([float(v) for v in parts[1:4]])
            q = np.array([float(v) for v in parts[4:8]])
        except ValueError as exc:
            raise SequenceFormatError(str(exc), path, lineno) from None
        if last is not None and frame <= last:
            raise SequenceFormatError(f"frame ids must increase ({frame} after {last})", path, lineno)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm < 1e-12:
            raise SequenceFormatError("degenerate quaternion", path, lineno)
        poses[frame] = Pose(Rotation.from_quat(q / norm).as_matrix(), t)
        last = frame
    return poses


def write_poses(path, poses: dict[int, Pose]) -> None:
    lines = []
    for frame in sorted(poses):
        p = poses[frame]
        q = Rotation.from_matrix(p.rotation).as_quat()
        if q[3] < 0:
            q = -q
        vals = [*p.translation, *q]
        lines.append(f"{frame} " + " ".join(repr(float(v)) for v in vals))
    Path(path).write_text("".join(ln + "\n" for ln in lines))


def read_detections(path) -> list[Detection]:
    path = Path(path)
    out: list[Detection] = []
    last = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            det = Detection.from_json(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise SequenceFormatError(f"bad detection record: {exc}", path, lineno) from None
        if last is not None and det.frame_id < last:
            raise SequenceFormatError(
                f"frame ids must be non-decreasing ({det.frame_id} after {last})", path, lineno)
        last = det.frame_id
        out.append(det)
    return out


def write_detections(path, detections) -> None:
    with open(path, "w") as fh:
        for d in detections:
            fh.write(json.dumps(d.to_json()) + "\n")


def load_sequence(detections_path, poses_path, intrinsics_path, frame_rate: float = 10.0) -> list[FrameInput]:
    """Join detections, poses and intrinsics into an ordered list of frames.

    Timestamps are ``frame_id / frame_rate``.
    """
    K = read_intrinsics(intrinsics_path)
    poses = read_poses(poses_path)
    dets = read_detections(detections_path)
    by_frame: dict[int, list[Detection]] = {}
    for d in dets:
        by_frame.setdefault(d.frame_id, []).append(d)
    missing = sorted(set(by_frame) - set(poses))
    if missing:
        raise SequenceFormatError(f"no camera pose for detection frame(s) {missing[:5]}", poses_path)
    return [
        FrameInput(f, f / frame_rate, poses[f], K, by_frame.get(f, []))
        for f in sorted(poses)
    ]


def serialize_frames(frames) -> str:
    """Canonical JSON text for a frame list (used for determinism checks)."""
    out = []
    for fr in frames:
        out.append(json.dumps({
            "frame": fr.frame_id,
            "timestamp": fr.timestamp,
            "T_wc": fr.T_wc.matrix().tolist(),
            "K": [fr.intrinsics.fx, fr.intrinsics.fy, fr.intrinsics.cx, fr.intrinsics.cy],
            "detections": [d.to_json() for d in fr.detections],
        }, sort_keys=True))
    return "\n".join(out)


# ---------------------------------------------------------------------------
# KITTI tracking labels

# frame track_id type truncated occluded alpha x1 y1 x2 y2 h w l x y z ry [score]
_KITTI_MIN_COLS = 17


def kitti_line_to_detection(line: str, K: CameraIntrinsics, bins: ViewpointBins = DEFAULT_BINS) -> Detection | None:
    """Map one KITTI tracking label line to a :class:`Detection`.

    KITTI locations are bottom centres in the rectified camera frame; the box
    centre sits ``h/2`` above (camera y points down). Extents map to
    ``(l, w, h)`` along the canonical object axes. ``DontCare`` rows give None.
    """
    parts = line.split()
    if len(parts) < _KITTI_MIN_COLS:
        raise ValueError(f"expected at least {_KITTI_MIN_COLS} columns, got {len(parts)}")
    label = parts[2]
    if label == "DontCare":
        return None
    frame = int(parts[0])
    x1, y1, x2, y2 = (float(v) for v in parts[6:10])
    h, w, length = (float(v) for v in parts[10:13])
    loc = np.array([float(v) for v in parts[13:16]])
    ry = float(parts[16])
    score = float(parts[17]) if len(parts) > _KITTI_MIN_COLS else 1.0
    center = loc - np.array([0.0, h / 2, 0.0])
    box = Box2(x1, y1, x2, y2)
    u = K.fx * center[0] / center[2] + K.cx
    v = K.fy * center[1] / center[2] + K.cy
    bx, by = box.center
    # object heading in camera coords is (cos ry, 0, -sin ry)
    a = math.degrees(-ry) % 360.0
    azi_bin = int(math.floor(a / bins.azimuth_step)) % bins.n_azimuth
    ele_bin = int(math.floor((0.0 - bins.elevation_min) / bins.elevation_step))
    ele_bin = min(max(ele_bin, 0), bins.n_elevation - 1)
    return Detection(
        frame_id=frame, class_label=label.lower(), score=min(max(score, 0.0), 1.0),
        box2d=box, offset=(u - bx, v - by), depth=float(center[2]),
        azimuth_bin=azi_bin, elevation_bin=ele_bin, scale=Scale(length, w, h),
    )


def load_kitti_labels(path, K: CameraIntrinsics, bins: ViewpointBins = DEFAULT_BINS) -> dict[int, list[Detection]]:
    """Read a KITTI tracking label file into per-frame detections.

    Conversion to world coordinates is left to the pipeline, which applies each
    frame's camera pose.
    """
    path = Path(path)
    out: dict[int, list[Detection]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            det = kitti_line_to_detection(line, K, bins)
        except ValueError as exc:
            raise SequenceFormatError(str(exc), path, lineno) from None
        if det is not None:
            out.setdefault(det.frame_id, []).append(det)
    return out


__all__ = [
    "CODE_DIM", "Detection", "FrameInput", "SequenceFormatError", "ViewpointBins", "DEFAULT_BINS",
    "back_project", "decode_viewpoint", "encode_viewpoint", "viewpoint_angles", "to_box3",
    "load_sequence", "read_detections", "write_detections", "read_poses", "write_poses",
    "read_intrinsics", "write_intrinsics", "serialize_frames", "load_kitti_labels",
    "kitti_line_to_detection",
]
