"""Editing on the 3D intermediate: identity retargeting and track edits.

The mesh stage separates performance (per-frame deltas) from identity
(template), so reenactment is delta transfer: peel the source template off,
add the target template back.  All ops are plain f64 arithmetic; when every
coordinate sits on a shared dyadic grid (the synthetic corpus guarantees
multiples of 2**-20) the transfer is exact and retargeting there-and-back
is a bitwise round trip.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, TopologyError
from .geometry import DESK_TOPOLOGY, FaceTopology, MeshSequence, PoseSequence


def _check_template(tpl, n_points: int, name: str) -> np.ndarray:
    tpl = np.asarray(tpl, dtype=np.float64)
    if tpl.shape != (n_points, 3):
        raise TopologyError(f"{name}: expected ({n_points}, 3) vertices, got {tpl.shape}")
    if not np.all(np.isfinite(tpl)):
        raise ShapeError(f"{name}: non-finite entries")
    return tpl


def retarget_mesh_sequence(src: MeshSequence, src_template, tgt_template) -> MeshSequence:
    """Transfer the performance in src onto another identity.

    frame t = tgt_template + (src[t] - src_template); both templates must
    share src's topology (same vertex count and ordering).
    """
    n = src.n_points
    src_template = _check_template(src_template, n, "src_template")
    tgt_template = _check_template(tgt_template, n, "tgt_template")
    out = tgt_template[None] + (src.frames - src_template[None])
    return MeshSequence(frames=out, fps=src.fps)


def scale_expression(meshes: MeshSequence, template, group: str, factor: float,
                     topology: FaceTopology = DESK_TOPOLOGY) -> MeshSequence:
    """Scale one group's deltas from the template: v' = t + factor*(v - t).

    Vertices outside the group are copied through untouched; factor 1 is a
    bitwise no-op.
    """
    factor = float(factor)
    if not np.isfinite(factor):
        raise ShapeError(f"factor must be finite, got {factor}")
    template = _check_template(template, meshes.n_points, "template")
    idx = topology.indices(group)  # TopologyError on unknown name
    out = meshes.frames.copy()
    if factor != 1.0:
        sl = slice(idx.start, idx.stop)
        t = template[sl]
        out[:, sl] = t[None] + factor * (out[:, sl] - t[None])
    return MeshSequence(frames=out, fps=meshes.fps)


def replace_pose_track(meshes_pose: PoseSequence, new_pose: PoseSequence) -> PoseSequence:
    """Swap in an edited head-motion track of the same length.

    PoseSequence construction already enforces finite values and rotation
    norm < pi per frame, so validation here is the length contract.
    """
    if len(meshes_pose) != len(new_pose):
        raise ShapeError(
            f"pose track length mismatch: existing {len(meshes_pose)} vs replacement {len(new_pose)}")
    return PoseSequence(poses=new_pose.poses.copy(), fps=new_pose.fps)
