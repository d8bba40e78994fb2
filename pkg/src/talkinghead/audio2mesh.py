"""Audio features to 3D face meshes: a two-layer head over a template mesh.

The head predicts per-vertex offsets from the canonical template rather
than absolute positions, and its output layer starts at exactly zero, so
an untrained model produces the neutral face.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .audio import AudioFeatureSequence
from .errors import DatasetError, DivergenceError, ShapeError
from .geometry import DESK_TOPOLOGY, FaceTopology, MeshSequence, canonical_face_mesh

PREFIX = "audio2mesh"


def init_mesh_regressor(feat_dim: int, topology: FaceTopology = DESK_TOPOLOGY,
                        hidden: int = 256, seed: int = 0) -> dict:
    """fc1 uniform +-1/sqrt(D), fc2 exactly zero, template = canonical mesh."""
    if feat_dim < 1 or hidden < 1:
        raise ShapeError(f"feat_dim and hidden must be >= 1, got {feat_dim}, {hidden}")
    rng = np.random.default_rng(seed)
    n = topology.n_points
    return {
        f"{PREFIX}.template": canonical_face_mesh(topology).astype(np.float32),
        f"{PREFIX}.fc1.w": nn.uniform_init(rng, (feat_dim, hidden), feat_dim),
        f"{PREFIX}.fc1.b": np.zeros(hidden, dtype=np.float32),
        f"{PREFIX}.fc2.w": np.zeros((hidden, 3 * n), dtype=np.float32),
        f"{PREFIX}.fc2.b": np.zeros(3 * n, dtype=np.float32),
    }


def _forward(params: dict, feats: np.ndarray):
    h_pre, c1 = nn.dense_forward(feats, params[f"{PREFIX}.fc1.w"], params[f"{PREFIX}.fc1.b"])
    h, relu_cache = nn.relu_forward(h_pre)
    out, c2 = nn.dense_forward(h, params[f"{PREFIX}.fc2.w"], params[f"{PREFIX}.fc2.b"])
    t = feats.shape[0]
    template = params[f"{PREFIX}.template"]
    meshes = out.reshape(t, template.shape[0], 3) + template
    return meshes, (c1, relu_cache, c2, t)


def _backward(params: dict, cache, dmeshes: np.ndarray) -> dict:
    c1, relu_cache, c2, t = cache
    g = {}
    dout = dmeshes.reshape(t, -1)
    dh, dw2, db2 = nn.dense_backward(c2, dout)
    nn.accumulate_grad(g, f"{PREFIX}.fc2.w", dw2)
    nn.accumulate_grad(g, f"{PREFIX}.fc2.b", db2)
    dh_pre = nn.relu_backward(relu_cache, dh)
    _, dw1, db1 = nn.dense_backward(c1, dh_pre)
    nn.accumulate_grad(g, f"{PREFIX}.fc1.w", dw1)
    nn.accumulate_grad(g, f"{PREFIX}.fc1.b", db1)
    return g


def mesh_forward(params: dict, feats) -> MeshSequence:
    """Per frame: template + reshape(fc2(relu(fc1(f)))), length preserved."""
    if isinstance(feats, AudioFeatureSequence):
        frames, fps = feats.frames, feats.fps
    else:
        frames, fps = np.asarray(feats), 25.0
    if frames.ndim != 2:
        raise ShapeError(f"features must be (T, D), got {frames.shape}")
    if frames.shape[1] != params[f"{PREFIX}.fc1.w"].shape[0]:
        raise ShapeError(
            f"feature dim {frames.shape[1]} does not match model dim "
            f"{params[f'{PREFIX}.fc1.w'].shape[0]}"
        )
    meshes, _ = _forward(params, frames.astype(np.float32))
    return MeshSequence(frames=meshes.astype(np.float64), fps=fps)


def loss_and_grads(params: dict, feats: np.ndarray, targets: np.ndarray):
    """L1 loss over predicted meshes plus parameter gradients."""
    meshes, cache = _forward(params, feats)
    loss = nn.l1_loss(meshes, targets)
    g = _backward(params, cache, nn.l1_loss_grad(meshes, targets))
    return loss, g


def train_audio2mesh(pairs, *, hidden: int = 256, lr: float = 1e-3, steps: int = 500,
                     batch: int = 64, eval_every: int = 50, seed: int = 0):
    """Adam on L1 loss over pooled frames; the last pair is held out.

    pairs: list of (AudioFeatureSequence, MeshSequence).
    Returns (params, history) with history = {"train": [(step, loss)],
    "val": [(step, loss)]}; deterministic given seed.
    """
    if not pairs:
        raise DatasetError("empty audio2mesh dataset")
    for i, (feats, meshes) in enumerate(pairs):
        if len(feats) != len(meshes):
            raise DatasetError(f"pair {i}: {len(feats)} feature frames vs {len(meshes)} meshes")
    feat_dim = pairs[0][0].frames.shape[1]
    train_pairs = pairs[:-1] if len(pairs) > 1 else pairs
    val_pairs = pairs[-1:]
    x_train = np.concatenate([p[0].frames for p in train_pairs]).astype(np.float32)
    y_train = np.concatenate([p[1].frames for p in train_pairs]).astype(np.float32)
    x_val = np.concatenate([p[0].frames for p in val_pairs]).astype(np.float32)
    y_val = np.concatenate([p[1].frames for p in val_pairs]).astype(np.float32)

    params = init_mesh_regressor(feat_dim, hidden=hidden, seed=seed)
    trainable = [k for k in params if not k.endswith(".template")]
    state = nn.init_adam(params, lr=lr, trainable=trainable)
    rng = np.random.default_rng(seed)
    history = {"train": [], "val": []}

    def val_loss():
        meshes, _ = _forward(params, x_val)
        return nn.l1_loss(meshes, y_val)

    history["val"].append((0, val_loss()))
    for step in range(1, steps + 1):
        idx = rng.integers(0, x_train.shape[0], size=min(batch, x_train.shape[0]))
        loss, grads = loss_and_grads(params, x_train[idx], y_train[idx])
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at step {step}")
        nn.adam_step(params, grads, state)
        history["train"].append((step, loss))
        if step % eval_every == 0 or step == steps:
            history["val"].append((step, val_loss()))
    return params, history
