"""Shape-code fusion, SDF decoding, surface extraction, placement and depth rendering.

Shapes are decoded in a canonical cube ``[-0.5, 0.5]^3``; per-axis scaling and a
rigid pose then place them in the world (scale first, in the object frame).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from skimage.measure import marching_cubes as _skimage_marching_cubes

from ._validation import CODE_DIM, check_code
from .geometry import CameraIntrinsics, Pose, Scale

MIN_RESOLUTION = 8
DEFAULT_TRUNCATION = 0.1
CANONICAL_EXTENT = (-0.5, 0.5)


def fuse_codes(codes) -> np.ndarray:
    """Componentwise mean of one or more shape codes."""
    codes = [check_code(c) for c in codes]
    if not codes:
        raise ValueError("cannot fuse an empty list of shape codes")
    return np.mean(np.stack(codes), axis=0)


class RunningCode:
    """Streaming mean of shape codes (Welford-style, no stored history)."""

    def __init__(self, dim: int = CODE_DIM):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)

    def add(self, code) -> None:
        code = check_code(code, self.dim)
        self.count += 1
        self.mean = self.mean + (code - self.mean) / self.count

    @property
    def value(self) -> np.ndarray | None:
        return self.mean.copy() if self.count else None


# ---------------------------------------------------------------------------
# decoders


class SdfDecoder(Protocol):
    def evaluate(self, code: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Signed distance at ``(N, 3)`` canonical points (negative inside)."""
        ...


class SphereDecoder:
    """Sphere of radius ``code[0]``."""

    def evaluate(self, code, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.linalg.norm(p, axis=1) - float(code[0])


class EllipsoidDecoder:
    """Axis-aligned ellipsoid with semi-axes ``code[0:3]``.

    Uses the first-order distance estimate ``k0 (k0 - 1) / k1``, exact on the
    surface and for spheres.
    """

    def evaluate(self, code, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.abs(np.asarray(code[:3], dtype=float))
        k0 = np.linalg.norm(p / r, axis=1)
        k1 = np.linalg.norm(p / r ** 2, axis=1)
        out = np.empty(len(p))
        centre = k1 < 1e-12
        out[~centre] = k0[~centre] * (k0[~centre] - 1.0) / k1[~centre]
        out[centre] = -r.min()
        return out


class SuperellipsoidDecoder:
    """Superellipsoid: semi-axes ``code[0:3]``, shape exponents ``code[3:5]``.

    Exponents of 0 fall back to 1 (an ellipsoid). The value is the radial
    distance to the surface along the ray from the centre.
    """

    def evaluate(self, code, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        a = np.abs(np.asarray(code[:3], dtype=float))
        e1 = float(code[3]) or 1.0
        e2 = float(code[4]) or 1.0
        q = np.abs(p) / a
        f = (q[:, 0] ** (2 / e2) + q[:, 1] ** (2 / e2)) ** (e2 / e1) + q[:, 2] ** (2 / e1)
        norm = np.linalg.norm(p, axis=1)
        out = np.empty(len(p))
        nz = f > 1e-300
        out[nz] = norm[nz] * (1.0 - f[nz] ** (-e1 / 2))
        out[~nz] = -a.min()
        return out


class GridDecoder:
    """Table-driven decoder: trilinear lookup in a precomputed SDF grid.

    The code is ignored; the grid file fixes the shape.
    """

    def __init__(self, grid: "TsdfGrid"):
        from scipy.interpolate import RegularGridInterpolator

        self.grid = grid
        axes = [grid.axis(i) for i in range(3)]
        self._interp = RegularGridInterpolator(
            axes, grid.values, bounds_error=False, fill_value=grid.truncation)

    @classmethod
    def from_file(cls, path) -> "GridDecoder":
        return cls(read_sdf_grid(path))

    def evaluate(self, code, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return self._interp(p)


DECODERS = {
    "sphere": SphereDecoder,
    "ellipsoid": EllipsoidDecoder,
    "superellipsoid": SuperellipsoidDecoder,
}


def make_decoder(spec: str) -> SdfDecoder:
    """``sphere``, ``ellipsoid``, ``superellipsoid`` or ``grid:PATH``."""
    if spec.startswith("grid:"):
        return GridDecoder.from_file(spec[len("grid:"):])
    try:
        return DECODERS[spec]()
    except KeyError:
        raise ValueError(f"unknown decoder {spec!r}") from None


# ---------------------------------------------------------------------------
# TSDF and surface


@dataclass(eq=False)
class TsdfGrid:
    values: np.ndarray                 # (nx, ny, nz), indexed [ix, iy, iz]
    truncation: float = DEFAULT_TRUNCATION
    extent: tuple[float, float] = CANONICAL_EXTENT

    @property
    def resolution(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)

    @property
    def voxel_size(self) -> np.ndarray:
        lo, hi = self.extent
        return (hi - lo) / np.asarray(self.values.shape, dtype=float)

    def axis(self, i: int) -> np.ndarray:
        lo, hi = self.extent
        n = self.values.shape[i]
        return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def voxel_centres(resolution: int, extent=CANONICAL_EXTENT) -> np.ndarray:
    lo, hi = extent
    ax = lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution
    g = np.meshgrid(ax, ax, ax, indexing="ij")
    return np.stack([c.ravel() for c in g], axis=1)


def decode_tsdf(decoder: SdfDecoder, code, resolution: int = 64,
                truncation: float = DEFAULT_TRUNCATION) -> TsdfGrid:
    """Sample the decoder at voxel centres of the canonical cube and truncate."""
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be at least {MIN_RESOLUTION}, got {resolution}")
    if not truncation > 0:
        raise ValueError("truncation must be positive")
    pts = voxel_centres(resolution)
    sdf = np.asarray(decoder.evaluate(np.asarray(code, dtype=float), pts), dtype=float)
    sdf = np.clip(sdf, -truncation, truncation).reshape(resolution, resolution, resolution)
    return TsdfGrid(sdf, truncation)


@dataclass(eq=False)
class TriMesh:
    vertices: np.ndarray     # (V, 3)
    triangles: np.ndarray    # (F, 3) int
    frame: str = "canonical"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @classmethod
    def empty(cls, frame: str = "canonical") -> "TriMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), frame)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges()) + len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def marching_cubes(g: TsdfGrid, level: float = 0.0, area_tol: float = 1e-12) -> TriMesh:
    """Zero level set of the grid as a triangle mesh in the canonical frame.

    Vertices are linearly interpolated along voxel edges and shared between
    neighbouring cells. Triangles with area at or below ``area_tol`` are dropped.
    """
    v = g.values
    if not (v.min() < level < v.max()):
        return TriMesh.empty()
    spacing = tuple(float(s) for s in g.voxel_size)
    verts, faces, _, _ = _skimage_marching_cubes(v, level=level, spacing=spacing,
                                                 allow_degenerate=False, method="lewiner")
    verts = verts + (g.extent[0] + 0.5 * np.asarray(spacing))
    mesh = TriMesh(verts, faces)
    keep = mesh.triangle_areas() > area_tol
    if not np.all(keep):
        mesh = _compact(TriMesh(verts, faces[keep]))
    return mesh


def _compact(m: TriMesh) -> TriMesh:
    used = np.unique(m.triangles)
    remap = np.full(len(m.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(m.vertices[used], remap[m.triangles], m.frame)


def place_in_world(m: TriMesh, T_wo: Pose, s: Scale) -> TriMesh:
    """``X_w = T_wo S X_o`` with ``S = diag(sx, sy, sz)``."""
    v = (m.vertices * s.as_array()) @ T_wo.rotation.T + T_wo.translation
    return TriMesh(v, m.triangles.copy(), "world")


# ---------------------------------------------------------------------------
# depth rendering


def render_depth(meshes, T_wc: Pose, K: CameraIntrinsics, width: int, height: int,
                 near: float = 1e-3) -> np.ndarray:
    """Z-buffer depth image of world-frame meshes; 0 marks empty pixels.

    Pixel ``(row, col)`` samples image point ``(u, v) = (col, row)``. Depth is
    interpolated perspective-correctly (linear in 1/z). Triangles with a vertex
    closer than ``near`` are skipped; back faces are drawn.
    """
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    depth = np.full((height, width), np.inf)
    T_cw = T_wc.inverse()
    for mesh in meshes:
        if mesh.is_empty:
            continue
        cam = T_cw.apply(mesh.vertices)
        z = cam[:, 2]
        uv = np.empty((len(cam), 2))
        ok = z > near
        uv[ok, 0] = K.fx * cam[ok, 0] / z[ok] + K.cx
        uv[ok, 1] = K.fy * cam[ok, 1] / z[ok] + K.cy
        tri = mesh.triangles[np.all(ok[mesh.triangles], axis=1)]
        for t in tri:
            _raster_triangle(depth, uv[t], z[t])
    depth[~np.isfinite(depth)] = 0.0
    return depth


def _raster_triangle(depth, uv, z):
    h, w = depth.shape
    x0 = max(int(np.ceil(uv[:, 0].min())), 0)
    x1 = min(int(np.floor(uv[:, 0].max())), w - 1)
    y0 = max(int(np.ceil(uv[:, 1].min())), 0)
    y1 = min(int(np.floor(uv[:, 1].max())), h - 1)
    if x1 < x0 or y1 < y0:
        return
    (ax, ay), (bx, by), (cx, cy) = uv
    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if abs(area) < 1e-12:
        return
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1, dtype=float), np.arange(y0, y1 + 1, dtype=float))
    w0 = ((bx - xs) * (cy - ys) - (by - ys) * (cx - xs)) / area
    w1 = ((cx - xs) * (ay - ys) - (cy - ys) * (ax - xs)) / area
    w2 = 1.0 - w0 - w1
    eps = -1e-9
    inside = (w0 >= eps) & (w1 >= eps) & (w2 >= eps)
    if not np.any(inside):
        return
    inv_z = w0 / z[0] + w1 / z[1] + w2 / z[2]
    zz = np.where(inside, 1.0 / inv_z, np.inf)
    block = depth[y0:y1 + 1, x0:x1 + 1]
    np.minimum(block, zz, out=block)


# ---------------------------------------------------------------------------
# file formats


def write_ply(path, mesh: TriMesh) -> None:
    """ASCII PLY with float vertices and triangle faces."""
    lines = [
        "ply", "format ascii 1.0", f"comment frame {mesh.frame}",
        f"element vertex {len(mesh.vertices)}",
        "property float x", "property float y", "property float z",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices", "end_header",
    ]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> TriMesh:
    text = Path(path).read_text().splitlines()
    frame = "canonical"
    nv = nf = 0
    i = 0
    while text[i] != "end_header":
        parts = text[i].split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
        elif parts[:2] == ["comment", "frame"]:
            frame = parts[2]
        i += 1
    body = text[i + 1:]
    verts = np.array([[float(v) for v in ln.split()] for ln in body[:nv]]).reshape(-1, 3)
    faces = np.array([[int(v) for v in ln.split()[1:4]] for ln in body[nv:nv + nf]]).reshape(-1, 3)
    return TriMesh(verts, faces, frame)


_DEPTH_HEADER = struct.Struct("<II")


def write_depth(path, depth: np.ndarray) -> None:
    """Raw depth: uint32 width, uint32 height, then float32 rows (little-endian)."""
    d = np.asarray(depth, dtype="<f4")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(_DEPTH_HEADER.pack(w, h))
        fh.write(d.tobytes(order="C"))


def read_depth(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h = _DEPTH_HEADER.unpack_from(data)
    arr = np.frombuffer(data, dtype="<f4", offset=_DEPTH_HEADER.size)
    if arr.size != w * h:
        raise ValueError(f"{path}: expected {w * h} depth values, found {arr.size}")
    return arr.reshape(h, w).astype(float)


def write_depth_pgm(path, depth: np.ndarray, max_depth: float | None = None) -> None:
    """Plain-text PGM (P2) preview, depth linearly mapped to 0..65535."""
    d = np.asarray(depth, dtype=float)
    top = max_depth if max_depth is not None else (d.max() if d.size and d.max() > 0 else 1.0)
    q = np.clip(np.round(d / top * 65535), 0, 65535).astype(int)
    h, w = q.shape
    rows = [" ".join(map(str, r)) for r in q]
    Path(path).write_text(f"P2\n{w} {h}\n65535\n" + "\n".join(rows) + "\n")


_GRID_HEADER = struct.Struct("<IIIf")


def write_sdf_grid(path, grid: TsdfGrid) -> None:
    """Header ``(nx, ny, nz, truncation)`` then float32 values, x slowest."""
    nx, ny, nz = grid.resolution
    with open(path, "wb") as fh:
        fh.write(_GRID_HEADER.pack(nx, ny, nz, float(grid.truncation)))
        fh.write(np.asarray(grid.values, dtype="<f4").tobytes(order="C"))


def read_sdf_grid(path) -> TsdfGrid:
    data = Path(path).read_bytes()
    nx, ny, nz, trunc = _GRID_HEADER.unpack_from(data)
    vals = np.frombuffer(data, dtype="<f4", offset=_GRID_HEADER.size)
    if vals.size != nx * ny * nz:
        raise ValueError(f"{path}: grid payload has {vals.size} values, expected {nx * ny * nz}")
    return TsdfGrid(vals.reshape(nx, ny, nz).astype(float), float(trunc))
