"""Sequence file format and PNG round-trip tests."""

import json

import numpy as np
import pytest

from talkinghead import files
from talkinghead.errors import FileFormatError, ShapeError
from talkinghead.geometry import LandmarkSequence, MeshSequence, PoseSequence


def test_mesh_sequence_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    seq = MeshSequence(frames=rng.standard_normal((3, 5, 3)), fps=25.0)
    path = tmp_path / "m.json"
    files.save_mesh_sequence(path, seq)
    back = files.load_mesh_sequence(path)
    np.testing.assert_array_equal(back.frames, seq.frames)
    assert back.fps == 25.0
    assert back.n_points == 5


def test_pose_sequence_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    poses = np.zeros((4, 6))
    poses[:, :3] = rng.uniform(-1, 1, (4, 3))
    poses[:, 5] = 2.5
    seq = PoseSequence(poses=poses, fps=30.0)
    path = tmp_path / "p.json"
    files.save_pose_sequence(path, seq)
    back = files.load_pose_sequence(path)
    np.testing.assert_array_equal(back.poses, seq.poses)
    assert back.fps == 30.0


def test_landmark_sequence_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    seq = LandmarkSequence(points=rng.uniform(0, 64, (2, 7, 2)), fps=25.0)
    path = tmp_path / "l.json"
    files.save_landmark_sequence(path, seq)
    back = files.load_landmark_sequence(path)
    np.testing.assert_array_equal(back.points, seq.points)
    assert back.n_points == 7


def test_reader_accepts_scientific_notation(tmp_path):
    path = tmp_path / "sci.json"
    doc = {"version": 1, "fps": 2.5e1, "frames": [[1e-3, 0.0, 0.0, 0.0, 0.0, 2.5e0]]}
    path.write_text(json.dumps(doc))
    seq = files.load_pose_sequence(path)
    assert seq.poses[0, 0] == pytest.approx(0.001)
    assert seq.fps == 25.0


def test_version_mismatch_rejected(tmp_path):
    path = tmp_path / "v9.json"
    path.write_text(json.dumps({"version": 9, "fps": 25, "n_points": 1, "frames": []}))
    with pytest.raises(FileFormatError):
        files.load_mesh_sequence(path)


def test_shape_disagreement_rejected(tmp_path):
    path = tmp_path / "bad.json"
    doc = {"version": 1, "fps": 25, "n_points": 3, "frames": [[[0, 0, 0], [1, 1, 1]]]}
    path.write_text(json.dumps(doc))
    with pytest.raises(FileFormatError):
        files.load_mesh_sequence(path)


def test_unreadable_json_rejected(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text("{nope")
    with pytest.raises(FileFormatError):
        files.load_pose_sequence(path)


def test_save_is_deterministic(tmp_path):
    rng = np.random.default_rng(4)
    seq = MeshSequence(frames=rng.standard_normal((2, 4, 3)), fps=25.0)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    files.save_mesh_sequence(a, seq)
    files.save_mesh_sequence(b, seq)
    assert a.read_bytes() == b.read_bytes()


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    path = tmp_path / "x.png"
    files.save_png(path, img)
    back = files.load_png(path)
    np.testing.assert_array_equal(back, img)


def test_png_rejects_wrong_dtype(tmp_path):
    with pytest.raises(ShapeError):
        files.save_png(tmp_path / "f.png", np.zeros((4, 4, 3), dtype=np.float32))


def test_png_unreadable(tmp_path):
    path = tmp_path / "bad.png"
    path.write_bytes(b"\x89PNG but not really")
    with pytest.raises(FileFormatError):
        files.load_png(path)
