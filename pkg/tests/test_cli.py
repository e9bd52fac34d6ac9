import json

import numpy as np
import pytest

from objmap import sim
from objmap.cli import main
from objmap.evaluation import eval_mot, read_gt, read_track_boxes
from objmap.shape import read_ply, write_depth

CHAIR = (0.6, 0.6, 0.9)


def zero_noise_scene(out, duration=30):
    objs = (sim.SimObject("chair", (4.0, -0.8, 0.45), CHAIR, yaw=0.3),
            sim.SimObject("table", (5.0, 1.0, 0.375), (1.6, 0.8, 0.75)))
    spec = sim.ScenarioSpec(0, duration, objs, (sim.CameraKey(0, (0.0, 0.0, 1.2), 0.0),),
                            scene="indoor", codes=sim.INDOOR_CODES)
    return sim.write_scenario(out, *sim.generate(spec))


def track_args(paths, out, *extra):
    return ["track", "--detections", str(paths["detections"]), "--poses", str(paths["poses"]),
            "--intrinsics", str(paths["intrinsics"]), "--out", str(out), *extra]


def test_track_zero_noise(tmp_path):
    paths = zero_noise_scene(tmp_path / "in")
    assert main(track_args(paths, tmp_path / "out", "--scene", "indoor")) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["frames"] == 30 and summary["terminated"] == 0 and summary["confirmed"] == 2
    assert {"ingest", "association", "shape_decode"} <= set(summary["timings_s"])
    boxes = read_track_boxes(tmp_path / "out" / "tracks.jsonl")
    assert {b.track_id for b in boxes} == {0, 1}
    rep = eval_mot(boxes, read_gt(paths["gt"]))
    assert rep.ids == 0
    meshes = sorted((tmp_path / "out" / "meshes").glob("*.ply"))
    assert [m.name for m in meshes] == ["track_0000.ply", "track_0001.ply"]
    assert read_ply(meshes[0]).frame == "world"


def test_track_empty_detections(tmp_path):
    paths = zero_noise_scene(tmp_path / "in", 5)
    paths["detections"].write_text("")
    assert main(track_args(paths, tmp_path / "out", "--scene", "indoor")) == 0
    assert (tmp_path / "out" / "tracks.jsonl").read_text() == ""


def test_track_input_and_config_errors(tmp_path, capsys):
    paths = zero_noise_scene(tmp_path / "in", 5)
    bad = dict(paths, poses=tmp_path / "missing.txt")
    assert main(track_args(bad, tmp_path / "out")) == 1
    (tmp_path / "bad.cfg").write_text("gate = -1\n")
    assert main(track_args(paths, tmp_path / "out", "--config", str(tmp_path / "bad.cfg"))) == 2
    paths["detections"].write_text('{"frame": 0, "class": "chair"\n')
    assert main(track_args(paths, tmp_path / "out")) == 1
    assert "detections.jsonl:1" in capsys.readouterr().err


def test_simulate(tmp_path):
    assert main(["simulate", "--preset", "occlusion_demo", "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--preset", "occlusion_demo", "--seed", "7", "--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["detections.jsonl", "gt.jsonl", "intrinsics.txt", "poses.txt"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert main(["simulate", "--preset", "nowhere", "--out", str(tmp_path / "c")]) == 2


def _write_tracks(path, recs):
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))


def _gt_as_tracks(gt_path):
    recs = []
    for line in gt_path.read_text().splitlines():
        g = json.loads(line)
        recs.append({"frame": g["frame"], "id": 100 + g["instance"], "class": g["class"], "center": g["center"],
                     "rotation": g["rotation"], "scale": g["scale"], "status": "confirmed"})
    return recs


def test_eval_mot(tmp_path, capsys):
    paths = zero_noise_scene(tmp_path / "in", 10)
    recs = _gt_as_tracks(paths["gt"])
    _write_tracks(tmp_path / "t.jsonl", recs)
    assert main(["eval", "--mode", "mot", "--pred", str(tmp_path / "t.jsonl"), "--gt", str(paths["gt"]),
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "MOTA,1.0" in out
    assert (tmp_path / "metrics.csv").read_text() == out

    # one false positive per frame on a two-object scene: MOTA = 1 - 10/20
    fps = [{"frame": f, "id": 999, "class": "chair", "center": [20.0, 5.0, 0.45], "scale": list(CHAIR)}
           for f in range(10)]
    _write_tracks(tmp_path / "fp.jsonl", recs + fps)
    assert main(["eval", "--mode", "mot", "--pred", str(tmp_path / "fp.jsonl"), "--gt", str(paths["gt"]),
                 "--out", str(tmp_path)]) == 0
    row = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("MOTA,")][0]
    assert float(row.split(",")[1]) == pytest.approx(0.5, abs=0.05)

    stray = recs + [dict(recs[0], frame=500)]
    _write_tracks(tmp_path / "stray.jsonl", stray)
    assert main(["eval", "--mode", "mot", "--pred", str(tmp_path / "stray.jsonl"), "--gt", str(paths["gt"]),
                 "--out", str(tmp_path)]) == 1


def test_eval_map_and_depth(tmp_path, capsys):
    paths = zero_noise_scene(tmp_path / "in", 3)
    dets = [dict(r, score=0.9) for r in _gt_as_tracks(paths["gt"])]
    _write_tracks(tmp_path / "d.jsonl", dets)
    assert main(["eval", "--mode", "map", "--pred", str(tmp_path / "d.jsonl"), "--gt", str(paths["gt"]),
                 "--out", str(tmp_path)]) == 0
    assert "mAP,1.0" in capsys.readouterr().out

    depth = np.full((6, 8), 3.0)
    write_depth(tmp_path / "p.bin", depth)
    np.save(tmp_path / "g.npy", depth)
    assert main(["eval", "--mode", "depth", "--pred", str(tmp_path / "p.bin"), "--gt", str(tmp_path / "g.npy"),
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "RMSE,0.0" in out and "delta1,1.0" in out
    np.save(tmp_path / "small.npy", depth[:3])
    assert main(["eval", "--mode", "depth", "--pred", str(tmp_path / "p.bin"), "--gt", str(tmp_path / "small.npy"),
                 "--out", str(tmp_path)]) == 1


def test_decode(tmp_path):
    c = np.zeros(64)
    c[0] = 0.4
    (tmp_path / "one.txt").write_text(" ".join(map(str, c)) + "\n")
    (tmp_path / "two.txt").write_text((" ".join(map(str, c)) + "\n") * 2)
    assert main(["decode", "--code", str(tmp_path / "one.txt"), "--decoder", "sphere", "--resolution", "64",
                 "--out", str(tmp_path / "one.ply")]) == 0
    m = read_ply(tmp_path / "one.ply")
    assert np.all(np.abs(np.linalg.norm(m.vertices, axis=1) - 0.4) <= 1.5 / 64)
    assert m.euler_characteristic() == 2
    assert main(["decode", "--codes", str(tmp_path / "two.txt"), "--decoder", "sphere", "--resolution", "64",
                 "--out", str(tmp_path / "two.ply")]) == 0
    assert (tmp_path / "one.ply").read_bytes() == (tmp_path / "two.ply").read_bytes()
    assert main(["decode", "--code", str(tmp_path / "one.txt"), "--resolution", "4",
                 "--out", str(tmp_path / "x.ply")]) == 1
    (tmp_path / "empty.txt").write_text("# nothing\n")
    assert main(["decode", "--codes", str(tmp_path / "empty.txt"), "--out", str(tmp_path / "x.ply")]) == 1
    (tmp_path / "short.txt").write_text("0.4 0.4\n")
    assert main(["decode", "--code", str(tmp_path / "short.txt"), "--out", str(tmp_path / "x.ply")]) == 1
