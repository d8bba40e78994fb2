"""Face topology, canonical mesh, rigid pose, and perspective projection.

Conventions: head-centered canonical coordinates with x right, y down,
z toward the camera being negative (the nose tip has the smallest z).
Unit is roughly the face half-width.  The camera sits at the origin
looking down +z, so a posed mesh lives at translation z ~ 2.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, ConfigError, PoseError, ShapeError, TopologyError


# ---------------------------------------------------------------------------
# topology


@dataclass(frozen=True)
class FaceTopology:
    n_points: int
    groups: dict  # name -> (start, stop) half-open index range
    closed: frozenset  # group names drawn as closed loops

    def __post_init__(self):
        covered = np.zeros(self.n_points, dtype=bool)
        for name, (start, stop) in self.groups.items():
            if not (0 <= start < stop <= self.n_points):
                raise TopologyError(f"group {name!r} range ({start},{stop}) outside [0,{self.n_points})")
            if covered[start:stop].any():
                raise TopologyError(f"group {name!r} overlaps another group")
            covered[start:stop] = True
        if not covered.all():
            raise TopologyError("groups do not cover every point index")
        unknown = set(self.closed) - set(self.groups)
        if unknown:
            raise TopologyError(f"closed set names unknown groups {sorted(unknown)}")

    def indices(self, name: str) -> range:
        if name not in self.groups:
            raise TopologyError(f"unknown group {name!r}")
        start, stop = self.groups[name]
        return range(start, stop)

    def is_closed(self, name: str) -> bool:
        return name in self.closed


DESK_TOPOLOGY = FaceTopology(
    n_points=50,
    groups={
        "jaw": (0, 11),
        "right_brow": (11, 16),
        "left_brow": (16, 21),
        "nose": (21, 26),
        "right_eye": (26, 32),
        "left_eye": (32, 38),
        "upper_lip": (38, 44),
        "lower_lip": (44, 50),
    },
    closed=frozenset({"right_eye", "left_eye", "upper_lip", "lower_lip"}),
)


def canonical_face_mesh(topology: FaceTopology = DESK_TOPOLOGY) -> np.ndarray:
    """Neutral template mesh for the desk topology, (n_points, 3) float64."""
    if topology.groups != DESK_TOPOLOGY.groups:
        raise TopologyError("canonical mesh is defined only for the desk topology")
    v = np.zeros((topology.n_points, 3))
    # jaw: ear-to-ear arc through the chin
    theta = np.linspace(0.0, math.pi, 11)
    v[0:11, 0] = -np.cos(theta)
    v[0:11, 1] = -0.1 + 1.0 * np.sin(theta)
    v[0:11, 2] = -0.05 * np.sin(theta)
    # brows: shallow arcs above the eyes (y is down, so "above" is negative)
    t = np.linspace(0.0, 1.0, 5)
    v[11:16, 0] = -0.75 + 0.6 * t
    v[11:16, 1] = -0.45 - 0.08 * np.sin(t * math.pi)
    v[11:16, 2] = -0.1
    v[16:21, 0] = 0.15 + 0.6 * t
    v[16:21, 1] = -0.45 - 0.08 * np.sin((1.0 - t) * math.pi)
    v[16:21, 2] = -0.1
    # nose: bridge down to tip, then nostril flares
    v[21:26] = [
        [0.0, -0.40, -0.10],
        [0.0, -0.20, -0.16],
        [0.0, 0.00, -0.22],
        [-0.12, 0.12, -0.15],
        [0.12, 0.12, -0.15],
    ]
    # eyes: 6-point ellipses
    ang = np.arange(6) * (2.0 * math.pi / 6.0)
    for start, cx in ((26, -0.45), (32, 0.45)):
        v[start:start + 6, 0] = cx + 0.18 * np.cos(ang)
        v[start:start + 6, 1] = -0.25 + 0.08 * np.sin(ang)
        v[start:start + 6, 2] = -0.05
    # lips: thin closed hexagons, upper above lower with a clear gap
    v[38:44] = [
        [-0.30, 0.40, -0.10],
        [-0.10, 0.33, -0.12],
        [0.10, 0.33, -0.12],
        [0.30, 0.40, -0.10],
        [0.10, 0.42, -0.12],
        [-0.10, 0.42, -0.12],
    ]
    v[44:50] = [
        [-0.30, 0.52, -0.10],
        [-0.10, 0.50, -0.12],
        [0.10, 0.50, -0.12],
        [0.30, 0.52, -0.10],
        [0.12, 0.60, -0.11],
        [-0.12, 0.60, -0.11],
    ]
    return v


# ---------------------------------------------------------------------------
# sequences


def _as_finite(a, name):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name}: non-finite entries")
    return a


@dataclass
class MeshSequence:
    frames: np.ndarray  # (T, N, 3)
    fps: float

    def __post_init__(self):
        self.frames = _as_finite(self.frames, "MeshSequence")
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ShapeError(f"mesh frames must be (T, N, 3), got {self.frames.shape}")

    @property
    def n_points(self):
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]


MAX_ROTATION_NORM = math.pi


def validate_pose(pose: np.ndarray) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (6,):
        raise ShapeError(f"pose must be a 6-vector, got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise PoseError("non-finite pose")
    angle = float(np.linalg.norm(pose[:3]))
    if angle >= MAX_ROTATION_NORM:
        raise PoseError(f"rotation angle {angle:.4f} not below pi")
    return pose


@dataclass
class PoseSequence:
    poses: np.ndarray  # (T, 6): axis-angle rotation then translation
    fps: float

    def __post_init__(self):
        poses = _as_finite(self.poses, "PoseSequence")
        if poses.ndim != 2 or poses.shape[1] != 6:
            raise ShapeError(f"poses must be (T, 6), got {poses.shape}")
        angles = np.linalg.norm(poses[:, :3], axis=1)
        if poses.shape[0] and angles.max(initial=0.0) >= MAX_ROTATION_NORM:
            bad = int(np.argmax(angles))
            raise PoseError(f"frame {bad}: rotation angle {angles[bad]:.4f} not below pi")
        self.poses = poses

    def __len__(self):
        return self.poses.shape[0]


@dataclass
class LandmarkSequence:
    points: np.ndarray  # (T, N, 2) pixel coordinates
    fps: float

    def __post_init__(self):
        self.points = _as_finite(self.points, "LandmarkSequence")
        if self.points.ndim != 3 or self.points.shape[2] != 2:
            raise ShapeError(f"landmarks must be (T, N, 2), got {self.points.shape}")

    @property
    def n_points(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


# ---------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    z_near: float = 0.1

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.z_near <= 0:
            raise ConfigError(f"z_near must be positive, got {self.z_near}")


def default_camera(image_size: int) -> CameraIntrinsics:
    """fx = fy = 0.9 * image_size, principal point at the image center."""
    s = float(image_size)
    return CameraIntrinsics(fx=0.9 * s, fy=0.9 * s, cx=s / 2.0, cy=s / 2.0)


# ---------------------------------------------------------------------------
# rigid pose and projection


def rotation_from_axis_angle(r: np.ndarray) -> np.ndarray:
    """Rodrigues' formula; the zero vector maps exactly to the identity."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3,):
        raise ShapeError(f"axis-angle must be a 3-vector, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise PoseError("non-finite rotation vector")
    theta = float(np.linalg.norm(r))
    if theta == 0.0:
        return np.eye(3)
    axis = r / theta
    kx, ky, kz = axis
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def apply_pose(vertices: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """v' = R(rotation) v + translation for every vertex, (N, 3) in/out."""
    vertices = np.asarray(vertices, dtype=np.float64)
    pose = np.asarray(pose, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise ShapeError(f"vertices must be (N, 3), got {vertices.shape}")
    if pose.shape != (6,):
        raise ShapeError(f"pose must be a 6-vector, got {pose.shape}")
    rot = rotation_from_axis_angle(pose[:3])
    return vertices @ rot.T + pose[3:]


def project(vertices_cam: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection u = fx*x/z + cx, v = fy*y/z + cy, (N, 2) out.

    Landing closer than z_near is an error, not a clamp: silent clamping
    would corrupt training targets.
    """
    vertices_cam = np.asarray(vertices_cam, dtype=np.float64)
    if vertices_cam.ndim != 2 or vertices_cam.shape[1] != 3:
        raise ShapeError(f"vertices must be (N, 3), got {vertices_cam.shape}")
    z = vertices_cam[:, 2]
    bad = np.nonzero(z < cam.z_near)[0]
    if bad.size:
        i = int(bad[0])
        raise BehindCameraError(f"vertex {i} at z={z[i]:.4f} is closer than z_near={cam.z_near}")
    out = np.empty((vertices_cam.shape[0], 2))
    out[:, 0] = cam.fx * vertices_cam[:, 0] / z + cam.cx
    out[:, 1] = cam.fy * vertices_cam[:, 1] / z + cam.cy
    return out


def project_sequence(meshes: MeshSequence, poses: PoseSequence, cam: CameraIntrinsics) -> LandmarkSequence:
    """Frame t = project(apply_pose(meshes[t], poses[t]), cam)."""
    if len(meshes) != len(poses):
        raise ShapeError(f"length mismatch: {len(meshes)} meshes vs {len(poses)} poses")
    out = np.empty((len(meshes), meshes.n_points, 2))
    for t in range(len(meshes)):
        try:
            out[t] = project(apply_pose(meshes.frames[t], poses.poses[t]), cam)
        except BehindCameraError as e:
            raise BehindCameraError(f"frame {t}: {e}") from e
    return LandmarkSequence(points=out, fps=meshes.fps)
