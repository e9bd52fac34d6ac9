"""Rigid transforms, oriented boxes, pinhole projection and box overlap measures.

World up is +z. Oriented boxes live in a canonical cube ``[-0.5, 0.5]^3`` that is
scaled per axis and then placed by a rigid pose, so ``Scale`` holds metric extents.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

FRAMES = ("camera", "world")

# Corner sign patterns, lexicographic with x slowest: (-,-,-), (-,-,+), (-,+,-) ...
CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))

_UPRIGHT_TOL = 1e-6


class FrameMismatchError(ValueError):
    pass


class NotUprightError(ValueError):
    pass


class BehindCameraError(ValueError):
    pass


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation(R, tol: float = 1e-6) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping points from a source frame into a target frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not is_rotation(R):
            raise ValueError("rotation must be orthonormal with determinant +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        """Transform an ``(N, 3)`` array (or a single 3-vector)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        return inverse(self)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def yaw(self) -> float:
        """Heading of the source x-axis about +z."""
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))


def compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: maps b's source frame into a's target frame."""
    R = a.rotation @ b.rotation
    # re-orthonormalise so long chains do not drift
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    if np.linalg.det(R) < 0:
        u[:, -1] *= -1
        R = u @ vt
    return Pose(R, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation)


@dataclass(frozen=True)
class Scale:
    sx: float
    sy: float
    sz: float

    def __post_init__(self):
        for name in ("sx", "sy", "sz"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"scale component {name} must be positive, got {v}")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.sx, self.sy, self.sz])

    @classmethod
    def from_array(cls, values) -> "Scale":
        sx, sy, sz = (float(v) for v in values)
        return cls(sx, sy, sz)


@dataclass(frozen=True, eq=False)
class OrientedBox3:
    pose: Pose
    scale: Scale
    frame: str = "world"

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}, got {self.frame!r}")

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    @property
    def volume(self) -> float:
        return self.scale.sx * self.scale.sy * self.scale.sz

    def transformed(self, T: Pose, frame: str) -> "OrientedBox3":
        return OrientedBox3(compose(T, self.pose), self.scale, frame)

    def is_upright(self, tol: float = _UPRIGHT_TOL) -> bool:
        R = self.pose.rotation
        return bool(abs(R[2, 2] - 1.0) < tol and np.all(np.abs(R[2, :2]) < tol)
                    and np.all(np.abs(R[:2, 2]) < tol))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def image_size(self) -> tuple[int, int]:
        """Image (width, height) implied by a centred principal point."""
        return int(round(2 * self.cx)), int(round(2 * self.cy))


@dataclass(frozen=True)
class Box2:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if self.xmax < self.xmin or self.ymax < self.ymin:
            raise ValueError(f"malformed 2D box {self}")

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax)

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]

    def clip(self, width: float, height: float) -> "Box2 | None":
        x0, y0 = max(self.xmin, 0.0), max(self.ymin, 0.0)
        x1, y1 = min(self.xmax, width), min(self.ymax, height)
        if x1 < x0 or y1 < y0:
            return None
        return Box2(x0, y0, x1, y1)


def box_corners(center, yaw: float, scale) -> np.ndarray:
    """Corners of an upright box given centre, heading and extents."""
    s = np.asarray(scale, dtype=float)
    return (CORNER_SIGNS * (0.5 * s)) @ rot_z(yaw).T + np.asarray(center, dtype=float)


def corners(box: OrientedBox3) -> np.ndarray:
    """The 8 box corners as an ``(8, 3)`` array in the box's frame."""
    local = CORNER_SIGNS * (0.5 * box.scale.as_array())
    return box.pose.apply(local)


def iou2d(a: Box2, b: Box2) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


# ---------------------------------------------------------------------------
# planar polygon helpers for the bird's-eye-view footprint


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` against a convex CCW ``clipper``."""
    output = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp = output
        output = []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    output.append(_intersect(prev, cur, s_prev, s_cur))
                output.append(cur)
            elif s_prev >= 0:
                output.append(_intersect(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return np.array(output, dtype=float).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns the hull CCW without repeating the start."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float))))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def _footprint(box: OrientedBox3) -> np.ndarray:
    """CCW bird's-eye-view rectangle of an upright box."""
    hx, hy = 0.5 * box.scale.sx, 0.5 * box.scale.sy
    local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    R = box.pose.rotation[:2, :2]
    return local @ R.T + box.pose.translation[:2]


def _z_span(box: OrientedBox3) -> tuple[float, float]:
    cz, h = box.pose.translation[2], 0.5 * box.scale.sz
    return cz - h, cz + h


def _check_pair(a: OrientedBox3, b: OrientedBox3) -> None:
    if a.frame != b.frame:
        raise FrameMismatchError(f"boxes in different frames: {a.frame} vs {b.frame}")
    if not (a.is_upright() and b.is_upright()):
        raise NotUprightError(
            "exact IoU needs boxes rotated about +z only; use voxel_iou3d for arbitrary rotations"
        )


def _overlap_terms(a: OrientedBox3, b: OrientedBox3) -> tuple[float, float]:
    _check_pair(a, b)
    fa, fb = _footprint(a), _footprint(b)
    inter_area = abs(polygon_area(clip_polygon(fa, fb)))
    a0, a1 = _z_span(a)
    b0, b1 = _z_span(b)
    inter_h = max(0.0, min(a1, b1) - max(a0, b0))
    inter = inter_area * inter_h
    union = a.volume + b.volume - inter
    return inter, union


def iou3d(a: OrientedBox3, b: OrientedBox3) -> float:
    inter, union = _overlap_terms(a, b)
    return float(min(1.0, max(0.0, inter / union)))


def giou3d(a: OrientedBox3, b: OrientedBox3) -> float:
    """Generalised IoU of two upright boxes.

    The enclosing region is the convex hull of both footprints extruded over the
    joint vertical span.
    """
    inter, union = _overlap_terms(a, b)
    iou = min(1.0, max(0.0, inter / union))
    hull = convex_hull(np.vstack([_footprint(a), _footprint(b)]))
    a0, a1 = _z_span(a)
    b0, b1 = _z_span(b)
    enclosing = abs(polygon_area(hull)) * (max(a1, b1) - min(a0, b0))
    # the enclosing region always contains the union; guard round-off
    enclosing = max(enclosing, union)
    return float(iou - (enclosing - union) / enclosing)


def voxel_iou3d(a: OrientedBox3, b: OrientedBox3, resolution: int = 128) -> float:
    """Brute-force IoU by counting voxel centres inside each box.

    The grid spans the joint axis-aligned bounds of both boxes with ``resolution``
    cells per axis. Works for arbitrary rotations.
    """
    if a.frame != b.frame:
        raise FrameMismatchError(f"boxes in different frames: {a.frame} vs {b.frame}")
    pts = np.vstack([corners(a), corners(b)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    axes = [lo[i] + (np.arange(resolution) + 0.5) * (hi[i] - lo[i]) / resolution for i in range(3)]

    if a.is_upright() and b.is_upright():
        # Inside-ness factorises into a planar mask times a vertical mask, so the
        # voxel count can be summed without materialising the full grid.
        gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
        plane = np.stack([gx.ravel(), gy.ravel()], axis=1)

        def masks(box):
            R = box.pose.rotation[:2, :2]
            local = (plane - box.pose.translation[:2]) @ R
            half = 0.5 * box.scale.as_array()
            in_xy = np.all(np.abs(local) <= half[:2], axis=1)
            in_z = np.abs(axes[2] - box.pose.translation[2]) <= half[2]
            return in_xy, in_z

        axy, az = masks(a)
        bxy, bz = masks(b)
        inter = np.count_nonzero(axy & bxy) * np.count_nonzero(az & bz)
        union = (np.count_nonzero(axy) * np.count_nonzero(az)
                 + np.count_nonzero(bxy) * np.count_nonzero(bz) - inter)
        return float(inter / union) if union else 0.0

    inter = union = 0
    gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
    plane = np.stack([gx.ravel(), gy.ravel()], axis=1)
    for z in axes[2]:
        p = np.column_stack([plane, np.full(len(plane), z)])
        ia = _inside(a, p)
        ib = _inside(b, p)
        inter += np.count_nonzero(ia & ib)
        union += np.count_nonzero(ia | ib)
    return float(inter / union) if union else 0.0


def _inside(box: OrientedBox3, points: np.ndarray) -> np.ndarray:
    local = (points - box.pose.translation) @ box.pose.rotation
    return np.all(np.abs(local) <= 0.5 * box.scale.as_array(), axis=1)


# ---------------------------------------------------------------------------
# projection


def project_point(K: CameraIntrinsics, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p[2] <= 0:
        raise BehindCameraError(f"point {p.tolist()} is behind the camera")
    return np.array([K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy])


def project_points(K: CameraIntrinsics, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project an ``(N, 3)`` camera-frame array; returns ``(uv, in_front)``."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    z = pts[:, 2]
    front = z > 0
    uv = np.full((len(pts), 2), np.nan)
    uv[front, 0] = K.fx * pts[front, 0] / z[front] + K.cx
    uv[front, 1] = K.fy * pts[front, 1] / z[front] + K.cy
    return uv, front


def project_bbox(K: CameraIntrinsics, T_cw: Pose, points) -> Box2 | None:
    """Pixel bounding box of world points seen from a camera, or ``None`` if none is in front."""
    cam = T_cw.apply(np.asarray(points, dtype=float).reshape(-1, 3))
    uv, front = project_points(K, cam)
    if not np.any(front):
        return None
    uv = uv[front]
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    return Box2(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def gravity_aligned(box: OrientedBox3) -> OrientedBox3:
    """Keep only the heading of ``box`` about +z, dropping roll and pitch."""
    R = box.pose.rotation
    yaw = float(np.arctan2(R[1, 0], R[0, 0]))
    return OrientedBox3(Pose(rot_z(yaw), box.pose.translation), box.scale, box.frame)
