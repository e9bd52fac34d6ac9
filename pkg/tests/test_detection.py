import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from objmap.detection import (DEFAULT_BINS, Detection, SequenceFormatError, ViewpointBins,
                              back_project, decode_viewpoint, encode_viewpoint, kitti_line_to_detection,
                              load_kitti_labels, load_sequence, read_detections, read_intrinsics,
                              read_poses, serialize_frames, to_box3, viewpoint_angles,
                              write_detections, write_intrinsics, write_poses)
from objmap.geometry import Box2, CameraIntrinsics, Pose, Scale, is_rotation, project_point, rot_x, rot_z

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)


def det(center=(320, 240), offset=(0, 0), depth=2.0, azi=0, ele=5, frame=0, code=None, cls="chair"):
    cx, cy = center
    return Detection(frame, cls, 0.9, Box2(cx - 10, cy - 10, cx + 10, cy + 10), offset, depth, azi, ele,
                     Scale(1, 1, 1), code)


def test_back_project_examples():
    np.testing.assert_allclose(back_project(det(), K), [0, 0, 2])
    np.testing.assert_allclose(back_project(det(center=(420, 240), depth=5), K), [1, 0, 5])
    np.testing.assert_allclose(back_project(det(offset=(100, 0), depth=5), K), [1, 0, 5])


@given(st.floats(0, 640), st.floats(0, 480), st.floats(-30, 30), st.floats(-30, 30), st.floats(0.1, 80))
def test_projection_round_trip(u, v, du, dv, z):
    d = Detection(0, "car", 1.0, Box2(u - 5, v - 5, u + 5, v + 5), (du, dv), z, 3, 4, Scale(1, 1, 1))
    p = to_box3(d, K).center
    np.testing.assert_allclose(project_point(K, p), [u + du, v + dv], atol=1e-6)


def test_bin_centres():
    for b in range(36):
        assert DEFAULT_BINS.azimuth_deg(b) == pytest.approx(b * 10 + 5)
    assert DEFAULT_BINS.elevation_deg(0) == pytest.approx(-40.5)
    assert DEFAULT_BINS.elevation_deg(9) == pytest.approx(40.5)


def test_decode_viewpoint_structure():
    for a in range(36):
        for e in range(10):
            R = decode_viewpoint(a, e)
            assert is_rotation(R, 1e-12)
    # bins 0 and 18 differ by a half turn about the object's up axis
    R0, R18 = decode_viewpoint(0, 5), decode_viewpoint(18, 5)
    np.testing.assert_allclose(R0.T @ R18, rot_z(math.pi), atol=1e-12)
    Rz180 = rot_z(math.pi)
    np.testing.assert_allclose(Rz180 @ Rz180, np.eye(3), atol=1e-12)
    with pytest.raises(ValueError):
        decode_viewpoint(36, 0)
    with pytest.raises(ValueError):
        decode_viewpoint(0, 10)


def test_object_up_maps_to_camera_up():
    # at zero elevation the object's +z axis is the camera's -y axis (image up)
    R = rot_x(math.pi / 2) @ rot_z(0.3)
    np.testing.assert_allclose(R @ [0, 0, 1], [0, -1, 0], atol=1e-12)


@given(st.integers(0, 35), st.integers(0, 9))
def test_encode_inverts_decode(a, e):
    assert encode_viewpoint(decode_viewpoint(a, e)) == (a, e)
    azi, ele = viewpoint_angles(decode_viewpoint(a, e))
    assert math.degrees(azi) == pytest.approx(a * 10 + 5)
    assert math.degrees(ele) == pytest.approx(-45 + (e + 0.5) * 9)


def test_configurable_elevation_range():
    bins = ViewpointBins(elevation_min=-20, elevation_max=20)
    assert bins.elevation_deg(0) == pytest.approx(-18)
    assert encode_viewpoint(decode_viewpoint(3, 7, bins), bins) == (3, 7)


def test_to_box3_examples():
    b = to_box3(det(azi=0, ele=5), K)
    assert b.frame == "camera"
    np.testing.assert_allclose(b.center, [0, 0, 2])
    np.testing.assert_allclose(b.pose.rotation, decode_viewpoint(0, 5))
    with pytest.raises(ValueError):
        det(depth=-1)


def test_detection_validation():
    with pytest.raises(ValueError):
        det(azi=40)
    with pytest.raises(ValueError):
        det(code=np.zeros(10))
    d = det(code=np.arange(64.0))
    assert Detection.from_json(d.to_json()).shape_code.tolist() == list(range(64))


def _write_seq(tmp_path, dets, frames=range(3)):
    write_detections(tmp_path / "d.jsonl", dets)
    write_poses(tmp_path / "p.txt", {f: Pose(rot_z(0.1 * f), [f, 0, 0]) for f in frames})
    write_intrinsics(tmp_path / "k.txt", K)
    return tmp_path / "d.jsonl", tmp_path / "p.txt", tmp_path / "k.txt"


def test_load_sequence_empty_detections(tmp_path):
    paths = _write_seq(tmp_path, [], range(10))
    frames = load_sequence(*paths)
    assert [f.frame_id for f in frames] == list(range(10))
    assert all(f.detections == [] for f in frames)
    assert frames[3].timestamp == pytest.approx(0.3)


def test_load_sequence_groups_and_is_deterministic(tmp_path):
    paths = _write_seq(tmp_path, [det(frame=0), det(frame=0), det(frame=2)])
    a = load_sequence(*paths)
    assert [len(f.detections) for f in a] == [2, 0, 1]
    np.testing.assert_allclose(a[2].T_wc.rotation, rot_z(0.2), atol=1e-12)
    assert serialize_frames(a) == serialize_frames(load_sequence(*paths))


def test_bad_bin_reports_line(tmp_path):
    rec = det(frame=0).to_json()
    bad = dict(rec, azi_bin=40)
    (tmp_path / "d.jsonl").write_text(json.dumps(rec) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(SequenceFormatError) as ei:
        read_detections(tmp_path / "d.jsonl")
    assert ei.value.lineno == 2
    assert ":2:" in str(ei.value)


def test_non_monotone_frames_rejected(tmp_path):
    write_detections(tmp_path / "d.jsonl", [det(frame=2), det(frame=1)])
    with pytest.raises(SequenceFormatError):
        read_detections(tmp_path / "d.jsonl")
    (tmp_path / "p.txt").write_text("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n")
    with pytest.raises(SequenceFormatError):
        read_poses(tmp_path / "p.txt")


def test_missing_pose_for_detection_frame(tmp_path):
    paths = _write_seq(tmp_path, [det(frame=5)], range(3))
    with pytest.raises(SequenceFormatError):
        load_sequence(*paths)


def test_pose_round_trip(tmp_path, rng):
    from scipy.spatial.transform import Rotation

    poses = {i: Pose(Rotation.random(random_state=i).as_matrix(), rng.normal(size=3)) for i in range(20)}
    write_poses(tmp_path / "p.txt", poses)
    back = read_poses(tmp_path / "p.txt")
    for i in poses:
        np.testing.assert_allclose(back[i].matrix(), poses[i].matrix(), atol=1e-12)
    assert read_intrinsics is not None
    write_intrinsics(tmp_path / "k.txt", K)
    assert read_intrinsics(tmp_path / "k.txt") == K


KITTI = "0 2 Car 0 0 -1.57 300.0 150.0 400.0 220.0 1.5 1.6 3.9 2.0 1.6 15.0 0.3"


def test_kitti_line_mapping():
    Kk = CameraIntrinsics(721.5, 721.5, 609.5, 172.8)
    d = kitti_line_to_detection(KITTI, Kk)
    assert d.class_label == "car" and d.frame_id == 0
    assert d.depth == pytest.approx(15.0)
    np.testing.assert_allclose(d.scale.as_array(), [3.9, 1.6, 1.5])
    np.testing.assert_allclose(back_project(d, Kk), [2.0, 1.6 - 0.75, 15.0], atol=1e-9)
    # decoded heading lies within half a bin of (cos ry, 0, -sin ry)
    R = decode_viewpoint(d.azimuth_bin, d.elevation_bin)
    heading = R[:, 0]
    ry = 0.3
    expected = np.array([math.cos(ry), 0.0, -math.sin(ry)])
    cosang = (heading[[0, 2]] @ expected[[0, 2]]) / np.linalg.norm(heading[[0, 2]])
    assert math.degrees(math.acos(min(1.0, cosang))) <= 5.0 + 1e-9
    assert kitti_line_to_detection(KITTI.replace("Car", "DontCare"), Kk) is None


def test_kitti_file(tmp_path):
    (tmp_path / "0000.txt").write_text(KITTI + "\n" + KITTI.replace("0 2 Car", "1 2 Car") + "\n")
    out = load_kitti_labels(tmp_path / "0000.txt", K)
    assert sorted(out) == [0, 1]
    (tmp_path / "bad.txt").write_text("0 1 Car\n")
    with pytest.raises(SequenceFormatError):
        load_kitti_labels(tmp_path / "bad.txt", K)
