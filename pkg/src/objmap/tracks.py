"""Online object map: per-frame pipeline and track lifecycle.

Each call to :func:`step` lifts the frame's detections to gravity-aligned world
boxes, predicts every live track, associates detections with matchable tracks
by ``1 - GIoU``, updates matched tracks, births tentative tracks, and applies
the termination and negative-information rules.

Termination depends on motion status: confirmed *dynamic* tracks die after
``n_terminate`` consecutive misses; static ones stay in the map. The status
used is the one from the track's last measurement update, because prediction
alone pulls the model probabilities toward the transition matrix's stationary
point and carries no evidence about motion.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import imm
from .association import build_cost_matrix, solve
from .config import RunConfig
from .detection import Detection, FrameInput, to_box3
from .geometry import (Box2, OrientedBox3, Pose, Scale, corners, gravity_aligned, iou2d,
                       project_bbox)
from .shape import RunningCode, TriMesh, decode_tsdf, make_decoder, marching_cubes, place_in_world

TENTATIVE, CONFIRMED, TERMINATED = "tentative", "confirmed", "terminated"


@dataclass(eq=False)
class Track:
    id: int
    class_label: str
    state: imm.ImmState
    orientation: np.ndarray
    scale: Scale
    born_frame: int
    last_observed_frame: int
    status: str = TENTATIVE
    hits: int = 1
    misses: int = 0
    not_visible: int = 0
    motion: str = "dynamic"
    confirmed_frame: int | None = None
    codes: RunningCode = field(default_factory=RunningCode)
    _scale_sum: np.ndarray = field(default=None, repr=False)
    _scale_n: int = 0
    _mesh: TriMesh | None = field(default=None, repr=False)
    _mesh_count: int = -1

    def __post_init__(self):
        if self._scale_sum is None:
            self._scale_sum = self.scale.as_array().copy()
            self._scale_n = 1

    @property
    def live(self) -> bool:
        return self.status != TERMINATED

    @property
    def center(self) -> np.ndarray:
        return self.state.position

    def box(self) -> OrientedBox3:
        return OrientedBox3(Pose(self.orientation, self.center), self.scale, "world")

    def canonical_mesh(self, decoder, resolution: int, truncation: float) -> TriMesh | None:
        """Decoded canonical mesh of the fused code (cached until a new code arrives)."""
        if self.codes.count == 0:
            return None
        if self._mesh is None or self._mesh_count != self.codes.count:
            grid = decode_tsdf(decoder, self.codes.value, resolution, truncation)
            self._mesh = marching_cubes(grid)
            self._mesh_count = self.codes.count
        return self._mesh

    def world_mesh(self, decoder, resolution: int = 32, truncation: float = 0.1) -> TriMesh | None:
        m = self.canonical_mesh(decoder, resolution, truncation)
        if m is None:
            return None
        return place_in_world(m, Pose(self.orientation, self.center), self.scale)


@dataclass(eq=False)
class TrackReport:
    frame_id: int
    track_id: int
    class_label: str
    center: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    status: str
    motion: str
    p_static: float
    in_view: bool

    def box(self) -> OrientedBox3:
        return OrientedBox3(Pose(self.rotation, self.center), Scale.from_array(self.scale), "world")

    def to_json(self) -> dict:
        return {
            "frame": int(self.frame_id),
            "id": int(self.track_id),
            "class": self.class_label,
            "center": [float(v) for v in self.center],
            "velocity": [float(v) for v in self.velocity],
            "rotation": [float(v) for v in np.asarray(self.rotation).ravel()],
            "scale": [float(v) for v in self.scale],
            "status": self.status,
            "motion": self.motion,
            "p_static": float(self.p_static),
            "in_view": bool(self.in_view),
        }


@dataclass(eq=False)
class FrameOutput:
    frame_id: int
    reports: list[TrackReport] = field(default_factory=list)
    events: list[tuple[str, int]] = field(default_factory=list)
    n_detections: int = 0
    n_matched: int = 0
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def n_unmatched(self) -> int:
        return self.n_detections - self.n_matched

    def reported(self) -> list[TrackReport]:
        """Confirmed tracks whose centre projects into the current image."""
        return [r for r in self.reports if r.status == CONFIRMED and r.in_view]


@dataclass(eq=False)
class MapState:
    config: RunConfig = field(default_factory=lambda: RunConfig().resolved())
    tracks: dict[int, Track] = field(default_factory=dict)
    terminated: dict[int, Track] = field(default_factory=dict)
    next_id: int = 0
    frame_id: int | None = None
    timestamp: float | None = None

    def __post_init__(self):
        self.config = self.config.resolved()
        self._imm = self.config.imm_config()
        self._bins = self.config.viewpoint_bins()
        self._decoder = None

    @property
    def imm_config(self) -> imm.ImmConfig:
        return self._imm

    @property
    def decoder(self):
        if self._decoder is None:
            self._decoder = make_decoder(self.config.decoder)
        return self._decoder

    def live_tracks(self) -> list[Track]:
        return [t for t in self.tracks.values() if t.live]

    def all_tracks(self) -> list[Track]:
        return sorted([*self.tracks.values(), *self.terminated.values()], key=lambda t: t.id)


@dataclass(frozen=True, eq=False)
class WorldDetection:
    detection: Detection
    box: OrientedBox3

    @property
    def center(self) -> np.ndarray:
        return self.box.center


def _image_size(cfg: RunConfig, frame: FrameInput) -> tuple[int, int]:
    w, h = frame.intrinsics.image_size
    return cfg.image_width or w, cfg.image_height or h


def _in_image(frame: FrameInput, T_cw: Pose, point, size) -> bool:
    p = T_cw.apply(point)
    if p[2] <= 0:
        return False
    K = frame.intrinsics
    u = K.fx * p[0] / p[2] + K.cx
    v = K.fy * p[1] / p[2] + K.cy
    return 0 <= u < size[0] and 0 <= v < size[1]


def lift_detections(frame: FrameInput, cfg: RunConfig) -> list[WorldDetection]:
    """Camera-frame boxes composed with the camera pose, then gravity aligned."""
    bins = cfg.viewpoint_bins()
    out = []
    for d in frame.detections:
        box_c = to_box3(d, frame.intrinsics, bins)
        out.append(WorldDetection(d, gravity_aligned(box_c.transformed(frame.T_wc, "world"))))
    return out


def select_matchable(m: MapState, frame: FrameInput | None = None) -> list[Track]:
    """Live tracks that could be seen: predicted centre in front of the camera."""
    tracks = m.live_tracks()
    if frame is None:
        return tracks
    T_cw = frame.T_cw
    return [t for t in tracks if T_cw.apply(t.center)[2] > 0]


def merge_detection(m: MapState, t: Track, wd: WorldDetection, frame_id: int) -> Track:
    """Fold a matched detection into its track (filter, orientation, scale, shape)."""
    d = wd.detection
    if d.class_label != t.class_label:
        raise ValueError(f"class mismatch: detection {d.class_label!r} vs track {t.class_label!r}")
    R = None
    if m.config.depth_noise_ref > 0:
        R = m.imm_config.R * (d.depth / m.config.depth_noise_ref) ** 2
    t.state = imm.update(t.state, wd.center, m.imm_config, R=R)
    t.orientation = wd.box.pose.rotation
    t._scale_sum = t._scale_sum + d.scale.as_array()
    t._scale_n += 1
    t.scale = Scale.from_array(t._scale_sum / t._scale_n)
    if d.shape_code is not None:
        t.codes.add(d.shape_code)
    t.hits += 1
    t.misses = 0
    t.not_visible = 0
    t.last_observed_frame = frame_id
    t.motion = imm.motion_status(t.state)
    return t


def _birth(m: MapState, wd: WorldDetection, frame_id: int) -> Track:
    d = wd.detection
    t = Track(
        id=m.next_id, class_label=d.class_label,
        state=imm.init(wd.center, m.imm_config),
        orientation=wd.box.pose.rotation, scale=d.scale,
        born_frame=frame_id, last_observed_frame=frame_id,
    )
    if d.shape_code is not None:
        t.codes.add(d.shape_code)
    t.motion = imm.motion_status(t.state)
    if m.config.n_confirm <= 1:
        t.status = CONFIRMED
        t.confirmed_frame = frame_id
    m.tracks[t.id] = t
    m.next_id += 1
    return t


def _terminate(m: MapState, t: Track, events, reason: str) -> None:
    t.status = TERMINATED
    del m.tracks[t.id]
    m.terminated[t.id] = t
    events.append((reason, t.id))


def handle_misses(m: MapState, unmatched_ids, events=None) -> MapState:
    """Miss bookkeeping and motion-gated termination for unmatched tracks."""
    events = [] if events is None else events
    cfg = m.config
    for tid in unmatched_ids:
        t = m.tracks.get(tid)
        if t is None or not t.live:
            continue
        t.hits = 0
        t.misses += 1
        if t.status == TENTATIVE:
            _terminate(m, t, events, "terminated")
            continue
        persistent = cfg.persist_static and t.motion == "static"
        if not persistent and t.misses >= cfg.n_terminate:
            _terminate(m, t, events, "terminated")
    return m


def prune_invisible(m: MapState, frame: FrameInput, matched=(), events=None) -> MapState:
    """Negative-information check for confirmed tracks missed this frame.

    A track whose centre projects inside the image is projected (mesh vertices
    if a decoded mesh is cached, else box corners); if its 2D box overlaps no
    detection box with IoU at least ``prune_iou`` it is marked not visible for
    this step. ``stale_after`` consecutive not-visible steps remove it.
    """
    events = [] if events is None else events
    cfg = m.config
    size = _image_size(cfg, frame)
    T_cw = frame.T_cw
    det_boxes = [b for b in (d.box2d.clip(*size) for d in frame.detections) if b is not None]
    matched = set(matched)
    for t in list(m.tracks.values()):
        if t.status != CONFIRMED or t.id in matched:
            continue
        if not _in_image(frame, T_cw, t.center, size):
            continue
        pts = corners(t.box())
        if t._mesh is not None and len(t._mesh.vertices):
            pts = place_in_world(t._mesh, Pose(t.orientation, t.center), t.scale).vertices
        proj = project_bbox(frame.intrinsics, T_cw, pts)
        proj = proj.clip(*size) if proj is not None else None
        if proj is None:
            continue
        best = max((iou2d(proj, b) for b in det_boxes), default=0.0)
        if best >= cfg.prune_iou:
            t.not_visible = 0
            continue
        t.not_visible += 1
        events.append(("not_visible", t.id))
        if t.not_visible >= cfg.stale_after:
            _terminate(m, t, events, "pruned")
    return m


def step(m: MapState, frame: FrameInput) -> tuple[MapState, FrameOutput]:
    """Advance the map by one frame. The map is updated in place and returned."""
    if m.frame_id is not None and frame.frame_id <= m.frame_id:
        raise ValueError(f"frame {frame.frame_id} is not after frame {m.frame_id}")
    cfg = m.config
    out = FrameOutput(frame.frame_id, n_detections=len(frame.detections))
    clock = time.perf_counter

    t0 = clock()
    dets = lift_detections(frame, cfg)
    t1 = clock()

    if m.timestamp is not None:
        dt = frame.timestamp - m.timestamp
        if not dt > 0:
            dt = (frame.frame_id - m.frame_id) / cfg.frame_rate
        for t in m.live_tracks():
            t.state = imm.predict(t.state, dt, m.imm_config)
    t2 = clock()

    matchable = select_matchable(m, frame)
    matches: list[tuple[int, int]] = []
    unmatched_dets: list[int] = []
    groups: dict[str, tuple[list[int], list[Track]]] = {}
    for i, wd in enumerate(dets):
        key = wd.detection.class_label if cfg.class_aware else ""
        groups.setdefault(key, ([], []))[0].append(i)
    for t in matchable:
        key = t.class_label if cfg.class_aware else ""
        if key in groups:
            groups[key][1].append(t)
    for key in sorted(groups):
        det_idx, trks = groups[key]
        if not trks:
            unmatched_dets.extend(det_idx)
            continue
        cm = build_cost_matrix([dets[i].box for i in det_idx], [t.box() for t in trks],
                               row_ids=det_idx, col_ids=[t.id for t in trks])
        a = solve(cm, cfg.gate_value, pregate=cfg.pregate)
        matches.extend(a.matches)
        unmatched_dets.extend(a.unmatched_detections)
    t3 = clock()

    events = out.events
    matched_tracks = set()
    for di, tid in sorted(matches):
        t = m.tracks[tid]
        if not cfg.class_aware and t.class_label != dets[di].detection.class_label:
            # class-agnostic matching across labels births instead of corrupting the track
            unmatched_dets.append(di)
            continue
        was_tentative = t.status == TENTATIVE
        merge_detection(m, t, dets[di], frame.frame_id)
        matched_tracks.add(tid)
        if was_tentative and t.hits >= cfg.n_confirm:
            t.status = CONFIRMED
            t.confirmed_frame = frame.frame_id
            events.append(("confirmed", tid))
    out.n_matched = len(matched_tracks)
    t4 = clock()

    for di in sorted(unmatched_dets):
        t = _birth(m, dets[di], frame.frame_id)
        events.append(("born", t.id))
        if t.status == CONFIRMED:
            events.append(("confirmed", t.id))
    born = {tid for kind, tid in events if kind == "born"}

    unmatched_tracks = [tid for tid in list(m.tracks) if tid not in matched_tracks and tid not in born]
    handle_misses(m, unmatched_tracks, events)
    prune_invisible(m, frame, matched=matched_tracks | born, events=events)
    t5 = clock()

    size = _image_size(cfg, frame)
    T_cw = frame.T_cw
    for t in sorted(m.tracks.values(), key=lambda x: x.id):
        out.reports.append(TrackReport(
            frame.frame_id, t.id, t.class_label, t.center.copy(), t.state.velocity.copy(),
            np.asarray(t.orientation).copy(), t.scale.as_array(), t.status, t.motion,
            t.state.p_static, _in_image(frame, T_cw, t.center, size),
        ))
    m.frame_id = frame.frame_id
    m.timestamp = frame.timestamp
    out.timings = {
        "ingest": t1 - t0, "predict": t2 - t1, "association": t3 - t2,
        "update": t4 - t3, "lifecycle": t5 - t4, "output": clock() - t5,
    }
    return m, out


def reconstruct(m: MapState, confirmed_only: bool = True) -> dict[int, TriMesh]:
    """World-frame meshes for tracks that have shape codes."""
    meshes = {}
    for t in m.all_tracks():
        if confirmed_only and t.confirmed_frame is None:
            continue
        mesh = t.world_mesh(m.decoder, m.config.resolution, m.config.truncation)
        if mesh is not None and not mesh.is_empty:
            meshes[t.id] = mesh
    return meshes
