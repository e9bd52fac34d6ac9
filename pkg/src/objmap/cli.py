"""Command-line entry point: ``objmap {track,simulate,eval,decode}``.

Exit codes: 0 success, 1 input/parse errors, 2 configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import sim, tracks
from .config import ConfigError, load_config
from .detection import SequenceFormatError, load_sequence
from .evaluation import (eval_depth, eval_map, eval_mot, metrics_csv, read_gt, read_scored_boxes,
                         read_track_boxes)
from .shape import (MIN_RESOLUTION, decode_tsdf, fuse_codes, make_decoder, marching_cubes,
                    read_depth, write_ply)

log = logging.getLogger("objmap")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG = 0, 1, 2


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# track


def cmd_track(args) -> int:
    cfg = load_config(args.config, scene=args.scene)
    t0 = time.perf_counter()
    try:
        frames = load_sequence(args.detections, args.poses, args.intrinsics, cfg.frame_rate)
    except OSError as exc:
        raise InputError(f"cannot read input: {exc}") from None
    parse_time = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = tracks.MapState(cfg)
    timings = {"ingest": parse_time}
    events: dict[str, int] = {}
    with open(out / "tracks.jsonl", "w") as fh:
        for fr in frames:
            m, fo = tracks.step(m, fr)
            for k, v in fo.timings.items():
                timings[k] = timings.get(k, 0.0) + v
            for kind, _ in fo.events:
                events[kind] = events.get(kind, 0) + 1
            for r in fo.reports:
                fh.write(json.dumps(r.to_json()) + "\n")

    t1 = time.perf_counter()
    meshes = {} if args.no_meshes else tracks.reconstruct(m)
    if meshes:
        (out / "meshes").mkdir(exist_ok=True)
        for tid, mesh in meshes.items():
            write_ply(out / "meshes" / f"track_{tid:04d}.ply", mesh)
    timings["shape_decode"] = time.perf_counter() - t1
    timings["total"] = time.perf_counter() - t0

    n_frames = len(frames)
    all_tracks = m.all_tracks()
    summary = {
        "frames": n_frames,
        "detections": sum(len(fr.detections) for fr in frames),
        "tracks": len(all_tracks),
        "confirmed": sum(1 for t in all_tracks if t.confirmed_frame is not None),
        "live": len(m.tracks),
        "terminated": len(m.terminated),
        "events": events,
        "meshes": len(meshes),
        "timings_s": {k: round(v, 6) for k, v in timings.items()},
        "ms_per_frame": {k: round(1e3 * v / n_frames, 4) for k, v in timings.items()} if n_frames else {},
        "config": cfg.to_text().splitlines(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    log.info("%d frames, %d tracks, %.3f s", n_frames, len(all_tracks), timings["total"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    try:
        spec = sim.preset(args.preset, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", sim.SimWarning)
        frames, gt = sim.generate(spec)
    for w in caught:
        log.warning("%s", w.message)
    paths = sim.write_scenario(args.out, frames, gt)
    for p in paths.values():
        log.info("wrote %s", p)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _check_alignment(pred_frames, gt_frames) -> None:
    if not pred_frames or not gt_frames:
        return
    lo, hi = min(gt_frames), max(gt_frames)
    stray = sorted(f for f in set(pred_frames) if not lo <= f <= hi)
    if stray:
        raise InputError(f"prediction frames {stray[:5]} fall outside the ground-truth range [{lo}, {hi}]")


def _read_depth_any(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    return read_depth(path)


def cmd_eval(args) -> int:
    try:
        if args.mode == "depth":
            pred, gt = _read_depth_any(args.pred), _read_depth_any(args.gt)
            if pred.shape != gt.shape:
                raise InputError(f"depth maps are misaligned: {pred.shape} vs {gt.shape}")
            mask = _read_depth_any(args.mask) > 0 if args.mask else None
            rows = list(eval_depth(pred, gt, mask, missing=args.missing).items())
        else:
            gt = read_gt(args.gt)
            if args.mode == "mot":
                pred = read_track_boxes(args.pred, reported_only=not args.all_rows)
                _check_alignment([p.frame_id for p in pred], [g.frame_id for g in gt])
                rows = eval_mot(pred, gt, args.iou if args.iou is not None else 0.25).as_rows()
            else:
                pred = read_scored_boxes(args.pred)
                _check_alignment([p.frame_id for p in pred], [g.frame_id for g in gt])
                rows = eval_map(pred, gt, args.iou if args.iou is not None else 0.5).as_rows()
    except OSError as exc:
        raise InputError(f"cannot read input: {exc}") from None
    text = metrics_csv(rows)
    sys.stdout.write(text)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# decode


def read_codes(path, single: bool = False) -> list:
    """Shape codes from a text file, one code per line (whitespace or comma separated).

    With ``single`` every number in the file belongs to one code.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read codes: {exc}") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].replace(",", " ").strip()
        if not line:
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no shape code found")
    if single:
        return [np.array([v for r in rows for v in r])]
    return [np.array(r) for r in rows]


def cmd_decode(args) -> int:
    if args.resolution < MIN_RESOLUTION:
        raise InputError(f"resolution must be >= {MIN_RESOLUTION}, got {args.resolution}")
    codes = read_codes(args.code or args.codes, single=args.code is not None)
    try:
        code = fuse_codes(codes)
        decoder = make_decoder(args.decoder)
    except (ValueError, OSError) as exc:
        raise InputError(str(exc)) from None
    mesh = marching_cubes(decode_tsdf(decoder, code, args.resolution, args.truncation))
    if mesh.is_empty:
        log.warning("decoded surface is empty")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_ply(args.out, mesh)
    log.info("wrote %s (%d vertices, %d faces)", args.out, len(mesh.vertices), len(mesh.triangles))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="objmap", description="Online multi-object mapping and evaluation tools.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="run the tracker over a detection sequence")
    t.add_argument("--detections", required=True, help="detections JSONL")
    t.add_argument("--poses", required=True, help="camera-to-world poses (frame tx ty tz qx qy qz qw)")
    t.add_argument("--intrinsics", required=True, help="file with 'fx fy cx cy'")
    t.add_argument("--scene", choices=("indoor", "outdoor"), default=None)
    t.add_argument("--config", default=None, help="key = value config file")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--no-meshes", action="store_true", help="skip shape decoding and PLY output")
    t.set_defaults(func=cmd_track)

    s = sub.add_parser("simulate", help="write a synthetic scenario")
    s.add_argument("--preset", required=True, help=f"one of {', '.join(sorted(sim.PRESETS))}")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("eval", help="compute MOT, detection or depth metrics")
    e.add_argument("--mode", choices=("mot", "map", "depth"), required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--iou", type=float, default=None, help="match threshold (default 0.25 mot, 0.5 map)")
    e.add_argument("--mask", default=None, help="depth mode: valid-pixel mask image")
    e.add_argument("--missing", choices=("exclude", "worst"), default="exclude",
                   help="depth mode: handling of empty predicted pixels")
    e.add_argument("--all-rows", action="store_true",
                   help="mot mode: score every track row, not only confirmed in-view ones")
    e.add_argument("--out", default=".", help="directory for metrics.csv")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("decode", help="decode shape code(s) to a canonical mesh")
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--code", help="file holding one code")
    src.add_argument("--codes", help="file holding one code per line (fused by averaging)")
    d.add_argument("--decoder", default="ellipsoid", help="sphere, ellipsoid, superellipsoid or grid:PATH")
    d.add_argument("--resolution", type=int, default=64)
    d.add_argument("--truncation", type=float, default=0.1)
    d.add_argument("--out", required=True, help="output PLY path")
    d.set_defaults(func=cmd_decode)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, SequenceFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
