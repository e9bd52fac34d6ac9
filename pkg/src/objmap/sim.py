"""Synthetic scenes: ground-truth objects, a camera path and a noisy detector.

Noise is applied where a monocular detector would make it: on the projected
object centre (pixels) and on the depth. Lateral error therefore stays at
``sigma_pos`` metres at any range while the back-projected 3D error grows
with depth noise.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .detection import (Detection, FrameInput, ViewpointBins, encode_viewpoint, write_detections,
                        write_intrinsics, write_poses)
from .evaluation import GtObject, write_gt
from .geometry import Box2, CameraIntrinsics, OrientedBox3, Pose, Scale, box_corners, project_points, rot_z

MOTIONS = ("static", "cv", "switch", "waypoints")


class SimWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SimObject:
    class_label: str
    position: tuple[float, float, float]
    scale: tuple[float, float, float]
    yaw: float = 0.0
    motion: str = "static"
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    switch_frame: int = 0
    # (frame, x, y, z) keyframes for motion="waypoints", linearly interpolated
    waypoints: tuple = ()
    # (start, end) frames during which the object exists; empty means always
    present: tuple = ()

    def __post_init__(self):
        if self.motion not in MOTIONS:
            raise ValueError(f"motion must be one of {MOTIONS}, got {self.motion!r}")
        if self.motion == "waypoints" and not self.waypoints:
            raise ValueError("waypoints motion needs at least one keyframe")

    def position_at(self, frame: int, frame_rate: float) -> np.ndarray:
        p0 = np.asarray(self.position, dtype=float)
        v = np.asarray(self.velocity, dtype=float)
        if self.motion == "static":
            return p0
        if self.motion == "cv":
            return p0 + v * frame / frame_rate
        if self.motion == "switch":
            return p0 + v * max(frame - self.switch_frame, 0) / frame_rate
        return _interp(self.waypoints, frame)[:3]

    def exists(self, frame: int) -> bool:
        return not self.present or self.present[0] <= frame < self.present[1]

    def is_moving(self, frame: int, frame_rate: float) -> bool:
        """Ground-truth motion status at ``frame`` (finite difference)."""
        step = self.position_at(frame + 1, frame_rate) - self.position_at(frame, frame_rate)
        return bool(np.linalg.norm(step) > 1e-12)


@dataclass(frozen=True)
class CameraKey:
    frame: int
    position: tuple[float, float, float]
    yaw: float = 0.0      # heading of the optical axis about +z (rad)
    pitch: float = 0.0    # positive looks up (rad)


@dataclass(frozen=True)
class NoiseSpec:
    sigma_pos: float = 0.0
    sigma_depth: float | None = None   # None: same as sigma_pos
    miss_rate: float = 0.0
    fp_rate: float = 0.0
    fp_depth: tuple[float, float] = (2.0, 40.0)

    def __post_init__(self):
        for name in ("miss_rate", "fp_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.sigma_pos < 0 or (self.sigma_depth is not None and self.sigma_depth < 0):
            raise ValueError("noise sigmas must be non-negative")

    @property
    def depth_sigma(self) -> float:
        return self.sigma_pos if self.sigma_depth is None else self.sigma_depth


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    duration: int
    objects: tuple[SimObject, ...]
    camera: tuple[CameraKey, ...]
    intrinsics: CameraIntrinsics = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)
    frame_rate: float = 10.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    # (object index, start frame, end frame) with end exclusive
    occlusions: tuple[tuple[int, int, int], ...] = ()
    max_range: float = 100.0
    scene: str = "indoor"
    codes: dict | None = None
    bins: ViewpointBins = field(default_factory=ViewpointBins)

    def __post_init__(self):
        if self.duration < 1:
            raise ValueError("duration must be at least one frame")
        if not self.camera:
            raise ValueError("camera path needs at least one keyframe")
        for idx, start, end in self.occlusions:
            if not 0 <= idx < len(self.objects) or end < start:
                raise ValueError(f"bad occlusion window {(idx, start, end)}")

    @property
    def image_size(self) -> tuple[int, int]:
        return self.intrinsics.image_size

    @property
    def classes(self) -> list[str]:
        return sorted({o.class_label for o in self.objects})

    def occluded(self, idx: int, frame: int) -> bool:
        return any(i == idx and s <= frame < e for i, s, e in self.occlusions)

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return replace(self, seed=seed)


def _interp(keys, frame: float) -> np.ndarray:
    keys = sorted(keys, key=lambda k: k[0])
    frames = np.array([k[0] for k in keys], dtype=float)
    vals = np.array([k[1:] for k in keys], dtype=float)
    return np.array([np.interp(frame, frames, vals[:, i]) for i in range(vals.shape[1])])


def camera_rotation(yaw: float, pitch: float = 0.0) -> np.ndarray:
    """Camera-to-world rotation for a camera (x right, y down, z forward) in a +z-up world."""
    fwd = np.array([math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(fwd, right)
    return np.column_stack([right, down, fwd])


def camera_pose(spec: ScenarioSpec, frame: int) -> Pose:
    keys = [(k.frame, *k.position, k.yaw, k.pitch) for k in spec.camera]
    x, y, z, yaw, pitch = _interp(keys, frame)
    return Pose(camera_rotation(yaw, pitch), np.array([x, y, z]))


def object_box(obj: SimObject, frame: int, frame_rate: float) -> OrientedBox3:
    return OrientedBox3(Pose(rot_z(obj.yaw), obj.position_at(frame, frame_rate)),
                        Scale.from_array(obj.scale), "world")


def _visible(spec: ScenarioSpec, T_cw: Pose, box: OrientedBox3) -> bool:
    """Centre in front, inside the image and within range."""
    c = T_cw.apply(box.center)
    if c[2] <= 0 or np.linalg.norm(c) > spec.max_range:
        return False
    K = spec.intrinsics
    w, h = spec.image_size
    u = K.fx * c[0] / c[2] + K.cx
    v = K.fy * c[1] / c[2] + K.cy
    return 0 <= u < w and 0 <= v < h


def _box2d(spec: ScenarioSpec, T_cw: Pose, box: OrientedBox3):
    cam = T_cw.apply(box_corners(box.center, box.pose.yaw(), box.scale.as_array()))
    if np.any(cam[:, 2] <= 1e-3):
        return None
    uv, _ = project_points(spec.intrinsics, cam)
    b = Box2(*uv.min(axis=0), *uv.max(axis=0))
    return b.clip(*spec.image_size)


def _detect(spec: ScenarioSpec, rng, frame: int, T_cw: Pose, box: OrientedBox3, cls: str,
            score: float, noisy: bool = True) -> Detection | None:
    b2 = _box2d(spec, T_cw, box)
    if b2 is None:
        return None
    K = spec.intrinsics
    c = T_cw.apply(box.center)
    u = K.fx * c[0] / c[2] + K.cx
    v = K.fy * c[1] / c[2] + K.cy
    depth = c[2]
    if noisy:
        n = spec.noise
        u += rng.normal(0.0, n.sigma_pos * K.fx / c[2]) if n.sigma_pos > 0 else 0.0
        v += rng.normal(0.0, n.sigma_pos * K.fy / c[2]) if n.sigma_pos > 0 else 0.0
        depth += rng.normal(0.0, n.depth_sigma) if n.depth_sigma > 0 else 0.0
        depth = max(depth, 0.1)
    R_co = T_cw.rotation @ box.pose.rotation
    azi, ele = encode_viewpoint(R_co, spec.bins)
    bx, by = b2.center
    code = None
    if spec.codes and cls in spec.codes:
        code = np.asarray(spec.codes[cls], dtype=float)
    return Detection(frame, cls, float(score), b2, (u - bx, v - by), float(depth), azi, ele,
                     box.scale, code)


def generate(spec: ScenarioSpec) -> tuple[list[FrameInput], list[GtObject]]:
    """Frames with simulated detections plus the matching ground truth.

    Deterministic in ``spec`` (including its seed). Objects that never enter
    the view raise a :class:`SimWarning`.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.noise
    classes = spec.classes
    class_scale = {}
    for o in spec.objects:
        class_scale.setdefault(o.class_label, o.scale)
    frames: list[FrameInput] = []
    gt: list[GtObject] = []
    seen = [False] * len(spec.objects)
    w, h = spec.image_size
    K = spec.intrinsics
    for f in range(spec.duration):
        T_wc = camera_pose(spec, f)
        T_cw = T_wc.inverse()
        dets = []
        for idx, obj in enumerate(spec.objects):
            box = object_box(obj, f, spec.frame_rate)
            # draws happen for every object and frame so streams stay aligned across settings
            miss = rng.random() < n.miss_rate
            score = rng.uniform(0.6, 1.0)
            if not obj.exists(f) or not _visible(spec, T_cw, box):
                continue
            seen[idx] = True
            gt.append(GtObject(f, idx, obj.class_label, box))
            if miss or spec.occluded(idx, f):
                continue
            d = _detect(spec, rng, f, T_cw, box, obj.class_label, score)
            if d is not None:
                dets.append(d)
        if classes and rng.random() < n.fp_rate:
            cls = classes[int(rng.integers(len(classes)))]
            z = rng.uniform(*n.fp_depth)
            u, v = rng.uniform(0, w), rng.uniform(0, h)
            yaw = rng.uniform(-math.pi, math.pi)
            centre_c = np.array([(u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z])
            box = OrientedBox3(Pose(rot_z(yaw), T_wc.apply(centre_c)), Scale.from_array(class_scale[cls]), "world")
            d = _detect(spec, rng, f, T_cw, box, cls, rng.uniform(0.3, 0.8), noisy=False)
            if d is not None:
                dets.append(d)
        frames.append(FrameInput(f, f / spec.frame_rate, T_wc, K, dets))
    for idx, ok in enumerate(seen):
        if not ok:
            warnings.warn(f"object {idx} ({spec.objects[idx].class_label}) is never in view", SimWarning)
    return frames, gt


def write_scenario(out_dir, frames, gt) -> dict[str, Path]:
    """Write ``detections.jsonl``, ``poses.txt``, ``intrinsics.txt`` and ``gt.jsonl``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "detections": out / "detections.jsonl",
        "poses": out / "poses.txt",
        "intrinsics": out / "intrinsics.txt",
        "gt": out / "gt.jsonl",
    }
    write_detections(paths["detections"], [d for fr in frames for d in fr.detections])
    write_poses(paths["poses"], {fr.frame_id: fr.T_wc for fr in frames})
    write_intrinsics(paths["intrinsics"], frames[0].intrinsics)
    write_gt(paths["gt"], gt)
    return paths


# ---------------------------------------------------------------------------
# presets

_CHAIR = (0.6, 0.6, 0.9)
_CAR = (4.5, 1.8, 1.5)
_DEG = math.pi / 180.0


def _code(*semi_axes) -> np.ndarray:
    c = np.zeros(64)
    c[: len(semi_axes)] = semi_axes
    return c


INDOOR_CODES = {
    "chair": _code(0.45, 0.45, 0.48),
    "table": _code(0.48, 0.48, 0.4),
    "cabinet": _code(0.48, 0.48, 0.49),
    "box": _code(0.47, 0.47, 0.47),
}


def _indoor_office(seed: int) -> ScenarioSpec:
    objects = (
        SimObject("chair", (4.0, 0.8, 0.45), _CHAIR, yaw=30 * _DEG),
        SimObject("chair", (4.5, -1.2, 0.45), _CHAIR, yaw=-60 * _DEG),
        SimObject("table", (5.5, -0.2, 0.375), (1.6, 0.8, 0.75)),
        SimObject("cabinet", (6.0, 1.8, 0.6), (0.5, 0.8, 1.2), yaw=180 * _DEG),
        SimObject("chair", (3.0, 1.5, 0.45), _CHAIR, yaw=90 * _DEG),
    )
    # sideways dolly with a fixed heading: viewpoint bins stay put for static objects
    camera = (
        CameraKey(0, (0.0, -1.0, 1.3), 0.0, -10 * _DEG),
        CameraKey(100, (0.0, 1.0, 1.3), 0.0, -10 * _DEG),
        CameraKey(200, (0.0, -1.0, 1.3), 0.0, -10 * _DEG),
    )
    return ScenarioSpec(seed, 200, objects, camera,
                        noise=NoiseSpec(sigma_pos=0.01, miss_rate=0.05),
                        scene="indoor", codes=INDOOR_CODES)


def _outdoor_road(seed: int) -> ScenarioSpec:
    objects = (
        SimObject("car", (12.0, 0.0, 0.75), _CAR, motion="cv", velocity=(10.0, 0.0, 0.0)),
        SimObject("car", (6.0, -3.5, 0.75), _CAR, motion="cv", velocity=(10.0, 0.0, 0.0)),
        SimObject("car", (100.0, -4.0, 0.75), _CAR),
    )
    camera = (
        CameraKey(0, (0.0, 0.0, 1.65), 0.0),
        CameraKey(300, (240.0, 0.0, 1.65), 0.0),
    )
    return ScenarioSpec(seed, 300, objects, camera,
                        intrinsics=CameraIntrinsics(721.0, 721.0, 621.0, 188.0),
                        noise=NoiseSpec(sigma_pos=0.1, miss_rate=0.1, fp_rate=0.05),
                        scene="outdoor")


def _occlusion_demo(seed: int) -> ScenarioSpec:
    objects = (
        SimObject("chair", (4.0, 0.0, 0.45), _CHAIR),
        # a detected occluder stands in front of the chair, hiding it completely
        SimObject("box", (3.35, 0.0, 0.5), (0.5, 0.7, 1.0), present=(28, 62)),
    )
    camera = (CameraKey(0, (0.0, 0.0, 1.2), 0.0),)
    return ScenarioSpec(seed, 100, objects, camera,
                        noise=NoiseSpec(sigma_pos=0.01),
                        occlusions=((0, 30, 60),), scene="indoor", codes=INDOOR_CODES)


def _mode_switch(seed: int) -> ScenarioSpec:
    objects = (
        SimObject("chair", (0.0, 0.0, 0.45), _CHAIR, motion="switch",
                  velocity=(0.5, 0.0, 0.0), switch_frame=40),
    )
    camera = (CameraKey(0, (0.0, -5.0, 1.2), 90 * _DEG),)
    return ScenarioSpec(seed, 90, objects, camera,
                        noise=NoiseSpec(sigma_pos=0.05), scene="indoor", codes=INDOOR_CODES)


PRESETS = {
    "indoor_office": _indoor_office,
    "outdoor_road": _outdoor_road,
    "occlusion_demo": _occlusion_demo,
    "mode_switch": _mode_switch,
}


def preset(name: str, seed: int = 0) -> ScenarioSpec:
    try:
        return PRESETS[name](seed)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
