"""Geometry tests: rotation, pose, projection, topology, canonical mesh."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from talkinghead import geometry as geo
from talkinghead.errors import BehindCameraError, PoseError, ShapeError, TopologyError


def test_rotation_zero_is_exact_identity():
    r = geo.rotation_from_axis_angle(np.zeros(3))
    np.testing.assert_array_equal(r, np.eye(3))


def test_rotation_half_turn_about_x():
    r = geo.rotation_from_axis_angle(np.array([math.pi, 0.0, 0.0]))
    np.testing.assert_allclose(r, np.diag([1.0, -1.0, -1.0]), atol=1e-12)


def test_rotation_quarter_turn_about_z():
    r = geo.rotation_from_axis_angle(np.array([0.0, 0.0, math.pi / 2]))
    np.testing.assert_allclose(r @ np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_rotation_orthonormal_det_one(seed):
    rng = np.random.default_rng(seed)
    r = geo.rotation_from_axis_angle(rng.uniform(-3.0, 3.0, 3))
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(r) - 1.0) < 1e-9


def test_apply_pose_zero_unchanged():
    mesh = geo.canonical_face_mesh()
    out = geo.apply_pose(mesh, np.zeros(6))
    np.testing.assert_array_equal(out, mesh)


def test_apply_pose_translation_only():
    mesh = geo.canonical_face_mesh()
    out = geo.apply_pose(mesh, np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]))
    np.testing.assert_allclose(out[:, 2], mesh[:, 2] + 1.0, rtol=1e-12)
    np.testing.assert_array_equal(out[:, :2], mesh[:, :2])


def test_apply_pose_composition_matches_matrix_oracle():
    rng = np.random.default_rng(5)
    mesh = rng.standard_normal((10, 3))
    p1 = np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(-2, 2, 3)])
    p2 = np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(-2, 2, 3)])
    two_step = geo.apply_pose(geo.apply_pose(mesh, p1), p2)
    r1 = geo.rotation_from_axis_angle(p1[:3])
    r2 = geo.rotation_from_axis_angle(p2[:3])
    combined = mesh @ (r2 @ r1).T + (r2 @ p1[3:] + p2[3:])
    np.testing.assert_allclose(two_step, combined, atol=1e-12)


def test_project_on_axis_point():
    cam = geo.CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    out = geo.project(np.array([[0.0, 0.0, 1.0]]), cam)
    np.testing.assert_array_equal(out, np.array([[0.0, 0.0]]))


def test_project_hand_pinhole_value():
    cam = geo.CameraIntrinsics(fx=2.0, fy=1.0, cx=0.0, cy=0.0)
    out = geo.project(np.array([[0.5, 0.0, 1.0]]), cam)
    assert out[0, 0] == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_project_doubling_z_halves_offsets(seed):
    rng = np.random.default_rng(seed)
    cam = geo.default_camera(64)
    v = np.column_stack([rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 5), rng.uniform(1.0, 3.0, 5)])
    near = geo.project(v, cam)
    v2 = v.copy()
    v2[:, 2] *= 2.0
    far = geo.project(v2, cam)
    np.testing.assert_allclose(far - [cam.cx, cam.cy], (near - [cam.cx, cam.cy]) / 2.0, atol=1e-9)


def test_project_behind_camera_names_vertex():
    cam = geo.default_camera(64)
    v = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0], [0.0, 0.0, 0.05], [0.0, 0.0, 3.0]])
    with pytest.raises(BehindCameraError) as exc:
        geo.project(v, cam)
    assert "vertex 2" in str(exc.value)


def test_project_sequence_matches_per_frame_composition():
    rng = np.random.default_rng(9)
    cam = geo.default_camera(64)
    mesh = geo.canonical_face_mesh()
    frames = np.stack([mesh + rng.uniform(-0.05, 0.05, mesh.shape) for _ in range(4)])
    poses = np.zeros((4, 6))
    poses[:, :3] = rng.uniform(-0.3, 0.3, (4, 3))
    poses[:, 5] = 2.5
    meshes = geo.MeshSequence(frames=frames, fps=25.0)
    pose_seq = geo.PoseSequence(poses=poses, fps=25.0)
    lmks = geo.project_sequence(meshes, pose_seq, cam)
    assert len(lmks) == 4
    for t in range(4):
        expect = geo.project(geo.apply_pose(frames[t], poses[t]), cam)
        np.testing.assert_array_equal(lmks.points[t], expect)


def test_project_sequence_identical_frames_identical_outputs():
    cam = geo.default_camera(64)
    mesh = geo.canonical_face_mesh()
    meshes = geo.MeshSequence(frames=np.stack([mesh, mesh, mesh]), fps=25.0)
    poses = np.zeros((3, 6))
    poses[:, 5] = 2.5
    lmks = geo.project_sequence(meshes, geo.PoseSequence(poses=poses, fps=25.0), cam)
    np.testing.assert_array_equal(lmks.points[0], lmks.points[1])
    np.testing.assert_array_equal(lmks.points[0], lmks.points[2])


def test_project_sequence_behind_camera_names_frame():
    cam = geo.default_camera(64)
    mesh = geo.canonical_face_mesh()
    meshes = geo.MeshSequence(frames=mesh[None], fps=25.0)
    poses = np.array([[0.0, 0.0, 0.0, 0.0, 0.0, -10.0]])
    with pytest.raises(BehindCameraError) as exc:
        geo.project_sequence(meshes, geo.PoseSequence(poses=poses, fps=25.0), cam)
    assert "frame 0" in str(exc.value)


def test_project_sequence_length_mismatch():
    cam = geo.default_camera(64)
    mesh = geo.canonical_face_mesh()
    meshes = geo.MeshSequence(frames=np.stack([mesh, mesh]), fps=25.0)
    poses = np.zeros((3, 6))
    poses[:, 5] = 2.5
    with pytest.raises(ShapeError):
        geo.project_sequence(meshes, geo.PoseSequence(poses=poses, fps=25.0), cam)


# ---------------------------------------------------------------------------
# topology and canonical mesh


def test_desk_topology_structure():
    topo = geo.DESK_TOPOLOGY
    assert topo.n_points == 50
    assert list(topo.indices("jaw")) == list(range(0, 11))
    assert list(topo.indices("lower_lip")) == list(range(44, 50))
    assert topo.is_closed("left_eye") and topo.is_closed("upper_lip")
    assert not topo.is_closed("jaw") and not topo.is_closed("nose")


def test_topology_rejects_overlap():
    with pytest.raises(TopologyError):
        geo.FaceTopology(n_points=4, groups={"a": (0, 3), "b": (2, 4)}, closed=frozenset())


def test_topology_rejects_gap():
    with pytest.raises(TopologyError):
        geo.FaceTopology(n_points=5, groups={"a": (0, 2), "b": (3, 5)}, closed=frozenset())


def test_topology_rejects_unknown_closed_group():
    with pytest.raises(TopologyError):
        geo.FaceTopology(n_points=2, groups={"a": (0, 2)}, closed=frozenset({"zz"}))


def test_topology_unknown_group_lookup():
    with pytest.raises(TopologyError):
        geo.DESK_TOPOLOGY.indices("chin")


def test_canonical_mesh_shape_and_bounds():
    mesh = geo.canonical_face_mesh()
    assert mesh.shape == (50, 3)
    assert np.all(np.isfinite(mesh))
    assert np.abs(mesh[:, 0]).max() <= 1.0
    assert mesh[:, 2].min() >= -0.3 and mesh[:, 2].max() <= 0.0


def test_canonical_mesh_projects_inside_frame():
    cam = geo.default_camera(64)
    posed = geo.apply_pose(geo.canonical_face_mesh(), np.array([0, 0, 0, 0, 0, 2.5], dtype=np.float64))
    pts = geo.project(posed, cam)
    assert pts.min() > 2.0 and pts.max() < 62.0


def test_canonical_mesh_lips_do_not_overlap_vertically():
    mesh = geo.canonical_face_mesh()
    upper = mesh[list(geo.DESK_TOPOLOGY.indices("upper_lip"))]
    lower = mesh[list(geo.DESK_TOPOLOGY.indices("lower_lip"))]
    assert upper[:, 1].max() < lower[:, 1].min()


def test_canonical_mesh_requires_desk_topology():
    other = geo.FaceTopology(n_points=2, groups={"a": (0, 2)}, closed=frozenset())
    with pytest.raises(TopologyError):
        geo.canonical_face_mesh(other)


# ---------------------------------------------------------------------------
# sequence validation


def test_pose_sequence_rejects_large_rotation():
    poses = np.zeros((2, 6))
    poses[1, 0] = math.pi
    with pytest.raises(PoseError) as exc:
        geo.PoseSequence(poses=poses, fps=25.0)
    assert "frame 1" in str(exc.value)


def test_pose_sequence_rejects_nonfinite():
    poses = np.zeros((1, 6))
    poses[0, 3] = np.nan
    with pytest.raises(ShapeError):
        geo.PoseSequence(poses=poses, fps=25.0)


def test_mesh_sequence_shape_checks():
    with pytest.raises(ShapeError):
        geo.MeshSequence(frames=np.zeros((2, 5, 2)), fps=25.0)


def test_camera_validation():
    from talkinghead.errors import ConfigError
    with pytest.raises(ConfigError):
        geo.CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0)
    with pytest.raises(ConfigError):
        geo.CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, z_near=-1.0)


def test_default_camera_values():
    cam = geo.default_camera(64)
    assert cam.fx == cam.fy == 57.6
    assert cam.cx == cam.cy == 32.0
    assert cam.z_near == 0.1
