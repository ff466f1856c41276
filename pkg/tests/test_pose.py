import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from ledmarker import detect
from ledmarker.detector import binarize, find_quad, panel_region
from ledmarker.errors import BehindCamera, ConfigError, DegenerateQuad, UnknownMarker
from ledmarker.optics import CameraModel, ScenePose, marker_homography, projected_corners
from ledmarker.pose import (
    MarkerMap,
    PoseEstimate,
    camera_position,
    decompose,
    estimate_pose,
    homography_from_quad,
    localize,
    localize_many,
    nearest_rotation,
    refine_pose,
)

GRID_D = np.round(np.arange(0.4, 2.01, 0.2), 1)
GRID_YAW = (-45, -30, -15, 0, 15, 30, 45)


def _analytic(camera, pose):
    return decompose(homography_from_quad(projected_corners(camera, pose), pose.marker_side), camera)


# --- homography ---------------------------------------------------------------


@pytest.mark.parametrize("pose", [ScenePose(0.6), ScenePose(1.0, 30), ScenePose(0.7, -20, roll=45)])
def test_homography_matches_renderer(camera, pose):
    H = homography_from_quad(projected_corners(camera, pose), pose.marker_side)
    ref = marker_homography(camera, pose)
    assert H[2, 2] == pytest.approx(1.0)
    assert np.abs(H - ref).max() / np.abs(ref).max() < 1e-6


def test_unit_square_to_itself_is_identity():
    sq = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]
    np.testing.assert_allclose(homography_from_quad(sq, 1.0), np.eye(3), atol=1e-12)


def test_collinear_corners_are_degenerate():
    with pytest.raises(DegenerateQuad):
        homography_from_quad([(0, 0), (1, 1), (2, 2), (3, 3)], 0.16)


# --- decomposition --------------------------------------------------------------


def test_decompose_frontal(camera):
    p = decompose(marker_homography(camera, ScenePose(0.6)), camera)
    assert p.distance == pytest.approx(0.6, abs=1e-6)
    assert p.yaw == pytest.approx(0.0, abs=1e-4)


def test_decompose_yawed(camera):
    p = decompose(marker_homography(camera, ScenePose(1.0, 45)), camera)
    assert p.yaw == pytest.approx(45.0, abs=0.01)
    assert p.distance == pytest.approx(1.0, abs=1e-6)


def test_negated_homography_gives_same_pose(camera):
    H = marker_homography(camera, ScenePose(0.8, 10))
    a, b = decompose(H, camera), decompose(-H, camera)
    np.testing.assert_allclose(a.translation, b.translation)
    np.testing.assert_allclose(a.rotation, b.rotation)


def test_zero_depth_is_behind_camera(camera):
    H = camera.K @ np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 0]])
    with pytest.raises(BehindCamera):
        decompose(H, camera)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(-60, 60), st.floats(-180, 180))
def test_rotation_always_valid(d, yaw, roll):
    camera = CameraModel()
    R = _analytic(camera, ScenePose(d, yaw, roll=roll)).rotation
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-6)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-6)


def test_nearest_rotation_fixes_reflections():
    R = nearest_rotation(np.diag([1.0, 1.0, -1.0]) * 1.3)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_analytic_corners_grid_is_exact(camera):
    for d in GRID_D:
        for yaw in GRID_YAW:
            p = _analytic(camera, ScenePose(d, yaw))
            assert abs(p.distance / d - 1) <= 1e-3
            assert abs(p.yaw - yaw) <= 1e-3 * max(abs(yaw), 1)


def test_pose_roll_is_reported(camera):
    assert _analytic(camera, ScenePose(0.6, roll=30)).roll == pytest.approx(30.0, abs=1e-6)


# --- refinement -----------------------------------------------------------------


def test_refine_reaches_exact_pose_from_a_perturbed_start(camera):
    pose = ScenePose(0.9, 25, roll=10)
    truth = _analytic(camera, pose)
    nudged = PoseEstimate(
        Rotation.from_rotvec([0.02, -0.03, 0.01]).as_matrix() @ truth.rotation, truth.translation * 1.03
    )
    better = refine_pose(nudged, projected_corners(camera, pose), camera, 0.16)
    assert better.distance == pytest.approx(0.9, rel=1e-8)
    assert better.yaw == pytest.approx(25.0, abs=1e-6)


@pytest.mark.parametrize("d", [0.4, 0.8, 1.2, 1.6])
def test_full_pipeline_pose_within_tolerance(render, camera, dictionary, d):
    # Quad corners from a rendered frame carry pixel quantization; see the
    # acceptance test for the full grid out to 2.0 m.
    for yaw in GRID_YAW:
        frame = render(3, distance=d, yaw=yaw)
        quad = find_quad(panel_region(frame, binarize(frame), 97))
        p = refine_pose(decompose(homography_from_quad(quad, 0.16), camera), quad.array(), camera, 0.16)
        assert abs(p.distance / d - 1) <= 0.02
        assert abs(p.yaw - yaw) <= 2.0


def test_estimate_pose_from_detection(render, camera, dictionary):
    r = detect(render(8, distance=0.5, yaw=-25, roll=180), dictionary)
    p = estimate_pose(r, camera, 0.16)
    assert r.rotation == 180
    assert p.distance == pytest.approx(0.5, rel=0.02)
    assert p.yaw == pytest.approx(-25, abs=2)
    assert p.roll == pytest.approx(180, abs=2) or p.roll == pytest.approx(-180, abs=2)


# --- localization ---------------------------------------------------------------


def _frontal(d=0.6):
    return PoseEstimate(np.eye(3), np.array([0.0, 0.0, d]))


def test_frontal_camera_sits_on_negative_z():
    m = MarkerMap()
    m.add(0, [0, 0, 0], np.eye(3), 0.16)
    np.testing.assert_allclose(localize(0, _frontal(), m), [0, 0, -0.6])


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_localize_translation_equivariance(v):
    Rw = Rotation.from_euler("zyx", [10, 20, 30], degrees=True).as_matrix()
    pose = PoseEstimate(Rotation.from_euler("y", 15, degrees=True).as_matrix(), np.array([0.1, -0.05, 0.7]))
    base = camera_position(pose, [1.0, 2.0, 3.0], Rw)
    moved = camera_position(pose, np.add([1.0, 2.0, 3.0], v), Rw)
    np.testing.assert_allclose(moved - base, v, atol=1e-12)


def test_localize_rotation_equivariance():
    Q = Rotation.from_euler("z", 90, degrees=True).as_matrix()
    pose = PoseEstimate(np.eye(3), np.array([0.0, 0.0, 1.0]))
    a = camera_position(pose, [1.0, 0, 0], np.eye(3))
    b = camera_position(pose, Q @ [1.0, 0, 0], Q)
    np.testing.assert_allclose(b, Q @ a, atol=1e-12)


def _world_setup(views):
    """Camera at a known world pose; each marker placed to be seen as ``views`` dictates."""
    Rc = Rotation.from_euler("xyz", [5, -12, 3], degrees=True).as_matrix()
    c = np.array([0.3, -0.1, 0.2])
    m = MarkerMap()
    for marker_id, pose in views:
        m.add(marker_id, Rc @ pose.translation() + c, Rc @ pose.rotation(), pose.marker_side)
    return m, c


def test_localize_from_analytic_corners(camera):
    views = [(1, ScenePose(0.8, 30)), (2, ScenePose(1.3, -10, roll=90))]
    m, c = _world_setup(views)
    for marker_id, pose in views:
        est = localize(marker_id, _analytic(camera, pose), m)
        np.testing.assert_allclose(est, c, atol=1e-6)


def test_localize_from_rendered_frames(render, camera, dictionary):
    views = [(1, ScenePose(0.5, 20)), (6, ScenePose(0.45, 0, roll=90)), (11, ScenePose(0.55, -35, roll=180))]
    m, c = _world_setup(views)
    fixes = []
    for marker_id, pose in views:
        r = detect(render(marker_id, distance=pose.distance, yaw=pose.yaw, roll=pose.roll), dictionary)
        assert r.id == marker_id
        fixes.append((r, estimate_pose(r, camera, 0.16)))
        assert np.linalg.norm(localize(*fixes[-1], m) - c) < 2e-3
    assert np.linalg.norm(localize_many(fixes, m) - c) < 1e-3


def test_unknown_marker():
    with pytest.raises(UnknownMarker):
        localize(3, _frontal(), MarkerMap())


def test_map_validation():
    m = MarkerMap()
    m.add(1, [0, 0, 0], np.eye(3), 0.16)
    with pytest.raises(ConfigError):
        m.add(1, [0, 0, 0], np.eye(3), 0.16)
    with pytest.raises(ConfigError):
        m.add(2, [0, 0, 0], np.diag([1, 1, -1]), 0.16)


def test_map_json_round_trip(tmp_path):
    m = MarkerMap()
    m.add(4, [1, 2, 3], Rotation.from_euler("y", 30, degrees=True).as_matrix(), 0.2)
    path = tmp_path / "map.json"
    m.save(path)
    doc = json.loads(path.read_text())
    assert doc["entries"][0]["id"] == 4 and len(doc["entries"][0]["orientation"]) == 9
    again = MarkerMap.load(path)
    np.testing.assert_allclose(again[4].orientation, m[4].orientation)
    assert again[4].marker_side == 0.2


def test_map_load_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"entries": [{"id": 1}]}')
    with pytest.raises(ConfigError):
        MarkerMap.load(path)
