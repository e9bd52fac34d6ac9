import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objmap import sim
from objmap.detection import back_project, serialize_frames

CHAIR = (0.6, 0.6, 0.9)
CAM = (sim.CameraKey(0, (0.0, 0.0, 1.2), 0.0),)


def spec(objects, duration=10, **kw):
    return sim.ScenarioSpec(kw.pop("seed", 0), duration, tuple(objects), kw.pop("camera", CAM), **kw)


def test_zero_noise_static_object():
    frames, gt = sim.generate(spec([sim.SimObject("chair", (4.0, 0.0, 0.45), CHAIR)]))
    assert len(gt) == 10 and all(len(f.detections) == 1 for f in frames)
    for g in gt[1:]:
        np.testing.assert_array_equal(g.box.center, gt[0].box.center)
        np.testing.assert_array_equal(g.box.pose.rotation, gt[0].box.pose.rotation)
    assert len({(d.box2d, d.depth, d.offset) for f in frames for d in f.detections}) == 1


@pytest.mark.filterwarnings("ignore::objmap.sim.SimWarning")
@settings(max_examples=25, deadline=None)
@given(st.floats(2, 15), st.floats(-2, 2), st.floats(0.2, 2), st.floats(-math.pi, math.pi),
       st.floats(-0.5, 0.5), st.floats(-0.3, 0.2))
def test_zero_noise_back_projection(x, y, z, yaw, cam_yaw, pitch):
    cam = (sim.CameraKey(0, (0.0, 0.0, 1.2), cam_yaw, pitch),)
    frames, gt = sim.generate(spec([sim.SimObject("chair", (x, y, z), CHAIR, yaw=yaw)], 1, camera=cam))
    for fr, g in zip(frames, gt):
        for d in fr.detections:
            np.testing.assert_allclose(fr.T_wc.apply(back_project(d, fr.intrinsics)), g.box.center, atol=1e-6)


def test_occlusion_window():
    s = spec([sim.SimObject("chair", (4.0, 0.0, 0.45), CHAIR)], 60, occlusions=((0, 20, 50),))
    frames, gt = sim.generate(s)
    seen = [bool(f.detections) for f in frames]
    assert seen == [not 20 <= k < 50 for k in range(60)]
    assert len(gt) == 60


def test_position_noise_statistic():
    objs = [sim.SimObject("chair", (6.0, 0.0, 1.2), CHAIR)]
    s = spec(objs, 10_000, noise=sim.NoiseSpec(sigma_pos=0.1))
    frames, gt = sim.generate(s)
    err = np.array([fr.T_cw.apply(fr.T_wc.apply(back_project(fr.detections[0], fr.intrinsics)))
                    - fr.T_cw.apply(g.box.center) for fr, g in zip(frames, gt)])
    assert len(err) == 10_000
    std = err.std(axis=0)
    assert np.all(np.abs(std - 0.1) <= 0.005), std


def test_miss_and_fp_rates():
    objs = [sim.SimObject("chair", (4.0, y, 0.45), CHAIR) for y in (-1, 0, 1)]
    frames, _ = sim.generate(spec(objs, 2000, noise=sim.NoiseSpec(miss_rate=0.2, fp_rate=0.3)))
    n = np.array([len(f.detections) for f in frames])
    # expected 3 * (1 - miss) true detections plus fp_rate injected ones per frame
    assert abs(n.mean() - (3 * 0.8 + 0.3)) < 0.1


def test_determinism():
    s = sim.preset("outdoor_road", 3)
    a, ga = sim.generate(s)
    b, gb = sim.generate(s)
    assert serialize_frames(a) == serialize_frames(b)
    c, _ = sim.generate(s.with_seed(4))
    assert serialize_frames(a) != serialize_frames(c)


def test_preset_definitions():
    o = sim.preset("occlusion_demo")
    assert o.objects[0].class_label == "chair" and o.objects[0].motion == "static"
    assert o.occlusions == ((0, 30, 60),)
    m = sim.preset("mode_switch").objects[0]
    assert m.switch_frame == 40 and m.velocity == (0.5, 0.0, 0.0)
    assert not m.is_moving(39, 10) and m.is_moving(40, 10)
    road = sim.preset("outdoor_road").objects
    assert sorted(o.motion for o in road) == ["cv", "cv", "static"]
    assert all(np.linalg.norm(o.velocity) == 10 for o in road if o.motion == "cv")
    with pytest.raises(ValueError):
        sim.preset("warehouse")


def test_never_in_view_warns():
    s = spec([sim.SimObject("chair", (-5.0, 0.0, 0.45), CHAIR)], 3)
    with pytest.warns(sim.SimWarning):
        sim.generate(s)


def test_spec_validation():
    with pytest.raises(ValueError):
        sim.NoiseSpec(miss_rate=1.5)
    with pytest.raises(ValueError):
        sim.SimObject("chair", (0, 0, 0), CHAIR, motion="teleport")
    with pytest.raises(ValueError):
        spec([], 0)


def test_write_scenario(tmp_path):
    frames, gt = sim.generate(sim.preset("occlusion_demo", 7))
    paths = sim.write_scenario(tmp_path / "a", frames, gt)
    assert sorted(p.name for p in paths.values()) == ["detections.jsonl", "gt.jsonl", "intrinsics.txt", "poses.txt"]
    sim.write_scenario(tmp_path / "b", *sim.generate(sim.preset("occlusion_demo", 7)))
    for p in paths.values():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
