"""Sequence file formats (MeshSeq/PoseSeq/LandmarkSeq v1 JSON) and PNG I/O.

All numbers are written as decimal JSON; readers accept anything the JSON
grammar allows, scientific notation included.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FileFormatError, ShapeError
from .geometry import LandmarkSequence, MeshSequence, PoseSequence


def _load_doc(path, kind: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise FileFormatError(f"{path}: unreadable {kind} file ({e})") from e
    if not isinstance(doc, dict):
        raise FileFormatError(f"{path}: {kind} document must be a JSON object")
    if doc.get("version") != 1:
        raise FileFormatError(f"{path}: unsupported {kind} version {doc.get('version')!r}")
    return doc


def _dump_doc(path, doc: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def save_mesh_sequence(path, seq: MeshSequence) -> None:
    _dump_doc(path, {
        "version": 1,
        "fps": seq.fps,
        "n_points": seq.n_points,
        "frames": seq.frames.tolist(),
    })


def load_mesh_sequence(path) -> MeshSequence:
    doc = _load_doc(path, "MeshSeq")
    frames = np.asarray(doc["frames"], dtype=np.float64)
    if frames.size == 0:
        frames = frames.reshape(0, int(doc["n_points"]), 3)
    if frames.ndim != 3 or frames.shape[1] != int(doc["n_points"]) or frames.shape[2] != 3:
        raise FileFormatError(f"{path}: frames shape {frames.shape} disagrees with n_points={doc['n_points']}")
    return MeshSequence(frames=frames, fps=float(doc["fps"]))


def save_pose_sequence(path, seq: PoseSequence) -> None:
    _dump_doc(path, {
        "version": 1,
        "fps": seq.fps,
        "frames": seq.poses.tolist(),
    })


def load_pose_sequence(path) -> PoseSequence:
    doc = _load_doc(path, "PoseSeq")
    poses = np.asarray(doc["frames"], dtype=np.float64)
    if poses.size == 0:
        poses = poses.reshape(0, 6)
    if poses.ndim != 2 or poses.shape[1] != 6:
        raise FileFormatError(f"{path}: pose frames must be 6-vectors, got shape {poses.shape}")
    return PoseSequence(poses=poses, fps=float(doc["fps"]))


def save_landmark_sequence(path, seq: LandmarkSequence) -> None:
    _dump_doc(path, {
        "version": 1,
        "fps": seq.fps,
        "n_points": seq.n_points,
        "frames": seq.points.tolist(),
    })


def load_landmark_sequence(path) -> LandmarkSequence:
    doc = _load_doc(path, "LandmarkSeq")
    points = np.asarray(doc["frames"], dtype=np.float64)
    if points.size == 0:
        points = points.reshape(0, int(doc["n_points"]), 2)
    if points.ndim != 3 or points.shape[1] != int(doc["n_points"]) or points.shape[2] != 2:
        raise FileFormatError(f"{path}: frames shape {points.shape} disagrees with n_points={doc['n_points']}")
    return LandmarkSequence(points=points, fps=float(doc["fps"]))


def save_png(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"PNG output must be uint8 (H, W, 3), got {pixels.dtype} {pixels.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(str(path), format="PNG")


def load_png(path) -> np.ndarray:
    try:
        with Image.open(str(path)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise FileFormatError(f"{path}: unreadable PNG ({e})") from e
