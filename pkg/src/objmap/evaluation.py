"""Detection AP, CLEAR-MOT style tracking metrics, and depth-map metrics."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .association import linear_assignment
from .geometry import NotUprightError, OrientedBox3, Pose, Scale, iou3d, voxel_iou3d


@dataclass(frozen=True, eq=False)
class GtObject:
    frame_id: int
    instance_id: int
    class_label: str
    box: OrientedBox3


@dataclass(frozen=True, eq=False)
class TrackBox:
    frame_id: int
    track_id: int
    class_label: str
    box: OrientedBox3


@dataclass(frozen=True, eq=False)
class ScoredBox:
    frame_id: int
    class_label: str
    score: float
    box: OrientedBox3


@dataclass
class MotReport:
    mota: float
    motp: float
    ids: int
    tp: int
    fp: int
    fn: int
    gt_total: int
    per_frame: list[dict] = field(default_factory=list)

    def as_rows(self) -> list[tuple[str, float]]:
        return [("MOTA", self.mota), ("MOTP", self.motp), ("IDS", self.ids),
                ("TP", self.tp), ("FP", self.fp), ("FN", self.fn), ("GT", self.gt_total)]


@dataclass
class MapReport:
    ap: dict[str, float]
    mean_ap: float
    unknown_class_fp: int = 0

    def as_rows(self) -> list[tuple[str, float]]:
        rows = [(f"AP[{c}]", v) for c, v in sorted(self.ap.items())]
        return rows + [("mAP", self.mean_ap)]


def box_iou(a: OrientedBox3, b: OrientedBox3) -> float:
    """Exact upright IoU, falling back to a 64^3 voxel estimate for tilted boxes."""
    try:
        return iou3d(a, b)
    except NotUprightError:
        return voxel_iou3d(a, b, resolution=64)


def _by_frame(items):
    out = defaultdict(list)
    for it in items:
        out[it.frame_id].append(it)
    return out


# ---------------------------------------------------------------------------
# detection AP


def average_precision(tp: np.ndarray, n_gt: int) -> float:
    """All-points interpolated AP from a score-sorted TP indicator."""
    if n_gt == 0 or len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=float)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def eval_map(detections, gt, iou_threshold: float = 0.5) -> MapReport:
    """Per-class AP and their mean over classes present in the ground truth.

    Detections whose class has no ground truth are tallied as
    ``unknown_class_fp`` and do not enter any class's AP.
    """
    gt = list(gt)
    classes = sorted({g.class_label for g in gt})
    dets = list(detections)
    unknown = sum(1 for d in dets if d.class_label not in classes)
    ap = {}
    for cls in classes:
        cls_gt = _by_frame(g for g in gt if g.class_label == cls)
        n_gt = sum(len(v) for v in cls_gt.values())
        cls_det = sorted((d for d in dets if d.class_label == cls), key=lambda d: -d.score)
        used = {f: np.zeros(len(v), dtype=bool) for f, v in cls_gt.items()}
        tp = np.zeros(len(cls_det))
        for k, d in enumerate(cls_det):
            cands = cls_gt.get(d.frame_id, [])
            best, best_j = -1.0, -1
            for j, g in enumerate(cands):
                if used[d.frame_id][j]:
                    continue
                o = box_iou(d.box, g.box)
                if o > best:
                    best, best_j = o, j
            if best_j >= 0 and best >= iou_threshold:
                used[d.frame_id][best_j] = True
                tp[k] = 1.0
        ap[cls] = average_precision(tp, n_gt)
    mean_ap = float(np.mean(list(ap.values()))) if ap else 0.0
    return MapReport(ap, mean_ap, unknown)


# ---------------------------------------------------------------------------
# tracking


def eval_mot(tracks, gt, iou_threshold: float = 0.25) -> MotReport:
    """MOTA / MOTP / ID switches with per-frame optimal matching on ``1 - IoU``.

    Only same-class pairs with IoU at or above the threshold can match. An ID
    switch is counted when a ground-truth instance is matched to a different
    track id than at its previous matched frame.
    """
    gt_f = _by_frame(gt)
    tr_f = _by_frame(tracks)
    last_id: dict[int, int] = {}
    tp = fp = fn = ids = 0
    iou_sum = 0.0
    per_frame = []
    for f in sorted(set(gt_f) | set(tr_f)):
        g_list, t_list = gt_f.get(f, []), tr_f.get(f, [])
        tids = [t.track_id for t in t_list]
        if len(set(tids)) != len(tids):
            raise ValueError(f"duplicate track ids in frame {f}")
        iou = np.zeros((len(g_list), len(t_list)))
        for i, g in enumerate(g_list):
            for j, t in enumerate(t_list):
                if g.class_label == t.class_label:
                    iou[i, j] = box_iou(g.box, t.box)
        pairs = [(i, j) for i, j in linear_assignment(1.0 - iou) if iou[i, j] >= iou_threshold]
        f_ids = 0
        for i, j in pairs:
            inst, tid = g_list[i].instance_id, t_list[j].track_id
            if inst in last_id and last_id[inst] != tid:
                f_ids += 1
            last_id[inst] = tid
            iou_sum += iou[i, j]
        f_tp = len(pairs)
        f_fp = len(t_list) - f_tp
        f_fn = len(g_list) - f_tp
        tp, fp, fn, ids = tp + f_tp, fp + f_fp, fn + f_fn, ids + f_ids
        per_frame.append({"frame": f, "gt": len(g_list), "tp": f_tp, "fp": f_fp, "fn": f_fn, "ids": f_ids})
    gt_total = sum(len(v) for v in gt_f.values())
    mota = 1.0 - (fp + fn + ids) / gt_total if gt_total else float(fp == 0)
    motp = iou_sum / tp if tp else 0.0
    return MotReport(mota, motp, ids, tp, fp, fn, gt_total, per_frame)


# ---------------------------------------------------------------------------
# depth

DEPTH_METRICS = ("RMSE", "logRMSE", "AbsRel", "SqRel", "delta1", "delta2", "delta3")


def eval_depth(pred, gt, mask=None, missing: str = "exclude",
               depth_range: tuple[float, float] = (1e-3, 80.0)) -> dict[str, float]:
    """Standard monocular depth error and threshold-accuracy metrics.

    ``missing="exclude"`` drops masked pixels where the prediction is empty
    (0). ``missing="worst"`` keeps them, filled with whichever end of
    ``depth_range`` is farther from the ground truth in ratio.
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    m = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    m = m & (gt > 0)
    if missing == "exclude":
        m = m & (pred > 0)
    elif missing == "worst":
        lo, hi = depth_range
        empty = m & (pred <= 0)
        fill = np.where(gt > np.sqrt(lo * hi), lo, hi)
        pred = np.where(empty, fill, pred)
    else:
        raise ValueError(f"missing must be 'exclude' or 'worst', got {missing!r}")
    if not np.any(m):
        raise ValueError("no valid pixels to evaluate")
    p, g = pred[m], gt[m]
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return {
        "RMSE": float(np.sqrt(np.mean(diff ** 2))),
        "logRMSE": float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        "AbsRel": float(np.mean(np.abs(diff) / g)),
        "SqRel": float(np.mean(diff ** 2 / g)),
        "delta1": float(np.mean(ratio < 1.25)),
        "delta2": float(np.mean(ratio < 1.25 ** 2)),
        "delta3": float(np.mean(ratio < 1.25 ** 3)),
    }


# ---------------------------------------------------------------------------
# file formats


def _box_from_record(rec) -> OrientedBox3:
    R = np.asarray(rec.get("rotation", np.eye(3).ravel()), dtype=float).reshape(3, 3)
    return OrientedBox3(Pose(R, rec["center"]), Scale.from_array(rec["scale"]), "world")


def _box_fields(box: OrientedBox3) -> dict:
    return {
        "center": [float(v) for v in box.pose.translation],
        "rotation": [float(v) for v in box.pose.rotation.ravel()],
        "scale": [float(v) for v in box.scale.as_array()],
    }


def gt_to_json(g: GtObject) -> dict:
    return {"frame": g.frame_id, "instance": g.instance_id, "class": g.class_label, **_box_fields(g.box)}


def write_gt(path, gt) -> None:
    with open(path, "w") as fh:
        for g in gt:
            fh.write(json.dumps(gt_to_json(g)) + "\n")


def read_gt(path) -> list[GtObject]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(GtObject(int(rec["frame"]), int(rec["instance"]), str(rec["class"]),
                                _box_from_record(rec)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad ground-truth record: {exc}") from None
    return out


def read_track_boxes(path, reported_only: bool = True) -> list[TrackBox]:
    """Track boxes from a ``tracks.jsonl`` file.

    With ``reported_only`` only confirmed tracks flagged ``in_view`` (when the
    field is present) are kept, which is what the tracker reports per frame.
    """
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if reported_only and (rec.get("status", "confirmed") != "confirmed"
                                  or not rec.get("in_view", True)):
                continue
            out.append(TrackBox(int(rec["frame"]), int(rec["id"]), str(rec["class"]),
                                _box_from_record(rec)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad track record: {exc}") from None
    return out


def read_scored_boxes(path) -> list[ScoredBox]:
    """Scored world boxes (JSONL with frame/class/score/center/rotation/scale)."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(ScoredBox(int(rec["frame"]), str(rec["class"]), float(rec.get("score", 1.0)),
                                 _box_from_record(rec)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad detection record: {exc}") from None
    return out


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for name, value in rows:
        w.writerow([name, repr(float(value)) if isinstance(value, float) else value])
    return buf.getvalue()
