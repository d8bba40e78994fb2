"""Two-stage training for the latent video generator.

Stage 1 trains the spatial pathway (backbone, reference net, pose guider)
on single frames with the motion module disabled; stage 2 freezes all of
that and trains only the temporal units on full clips.  Both stages use
the standard noise-prediction objective with uniformly drawn timesteps.
"""

from __future__ import annotations

import numpy as np

from .. import nn
from ..errors import DatasetError, DivergenceError
from .latent import encode_latent, to_chw
from .model import Lmk2Video
from .schedule import NoiseSchedule, make_schedule

FULL_SCALE_LR = 1e-5  # hour-scale-data setting; desk runs override


def _encode_chw(image) -> np.ndarray:
    return to_chw(encode_latent(image))


def _corrupt(x0, ts, eps, schedule):
    """Vectorized q_sample over a batch with per-sample timesteps."""
    ab = schedule.alpha_bars[ts].astype(np.float32)
    s1 = np.sqrt(ab)[:, None, None, None]
    s2 = np.sqrt(1.0 - ab)[:, None, None, None]
    return s1 * x0 + s2 * eps


def stage1_loss_and_grads(model: Lmk2Video, params, x0, refs, poses, ref_lmks,
                          ts, eps, schedule):
    """Batched single-frame objective; per-sample reference conditioning.

    x0/refs: (B, 48, h, w); poses/ref_lmks: (B, 3, H, W); ts: (B,); eps like x0.
    """
    x_t = _corrupt(x0, ts, eps, schedule)
    ref_feats, c_ref = model.refnet.fwd(params, refs)
    guidance, c_guid = model.poseguider.fwd(params, poses, ref_lmks)
    eps_hat, c_bb = model.backbone.fwd(params, x_t, ts, ref_feats, guidance,
                                       motion_enabled=False)
    loss = nn.mse_loss(eps_hat, eps)
    g: dict = {}
    dref, dguid = model.backbone.bwd(g, params, c_bb, nn.mse_loss_grad(eps_hat, eps))
    model.refnet.bwd(g, params, c_ref, dref)
    model.poseguider.bwd(g, params, c_guid, dguid)
    return loss, g


def stage2_loss_and_grads(model: Lmk2Video, params, clip_x0, ref, poses, ref_lmk,
                          t, eps, schedule):
    """Full-clip objective with the motion module active; only motion.*
    gradients are kept (everything else is frozen in stage 2)."""
    x_t = _corrupt(clip_x0, np.full(clip_x0.shape[0], t), eps, schedule)
    ref_feats, _ = model.refnet.fwd(params, ref)
    guidance, _ = model.poseguider.fwd(params, poses, ref_lmk)
    eps_hat, c_bb = model.backbone.fwd(params, x_t, t, ref_feats, guidance,
                                       motion_enabled=True)
    loss = nn.mse_loss(eps_hat, eps)
    g: dict = {}
    model.backbone.bwd(g, params, c_bb, nn.mse_loss_grad(eps_hat, eps))
    return loss, {k: v for k, v in g.items() if k.startswith("motion.")}


def _check_stage1_dataset(dataset):
    if not dataset:
        raise DatasetError("empty stage-1 dataset")
    for i, sample in enumerate(dataset):
        if len(sample) != 4:
            raise DatasetError(f"sample {i}: expected (target, reference, pose, ref_landmark)")


def train_stage1(dataset, *, model: Lmk2Video | None = None, params: dict | None = None,
                 schedule: NoiseSchedule | None = None, lr: float = 1e-3,
                 weight_decay: float = 0.01, steps: int = 2000, batch: int = 4,
                 eval_every: int = 100, seed: int = 0):
    """dataset: (target, reference, pose image, reference-landmark image)
    uint8 tuples.  The last sample is held out for a fixed-noise validation
    loss.  Returns (model, params, schedule, history)."""
    _check_stage1_dataset(dataset)
    if model is None:
        model = Lmk2Video()
    if params is None:
        params = model.init_params(seed)
    if schedule is None:
        schedule = make_schedule()
    trainable = [k for k in params if not k.startswith("motion.")]
    state = nn.init_adam(params, lr=lr, weight_decay=weight_decay, trainable=trainable)
    rng = np.random.default_rng(seed)

    enc = [( _encode_chw(tg), _encode_chw(rf),
             model.poseguider.normalize(ps), model.poseguider.normalize(rl))
           for tg, rf, ps, rl in dataset]
    train = enc[:-1] if len(enc) > 1 else enc
    val = enc[-1]

    # fixed validation draws so the held-out loss is comparable across steps
    val_rng = np.random.default_rng(seed + 1)
    n_val = 8
    val_ts = val_rng.integers(0, schedule.t_steps, size=n_val)
    val_eps = val_rng.standard_normal((n_val,) + val[0].shape).astype(np.float32)
    val_x0 = np.repeat(val[0][None], n_val, axis=0)
    val_refs = np.repeat(val[1][None], n_val, axis=0)
    val_poses = np.repeat(val[2][None], n_val, axis=0)
    val_lmks = np.repeat(val[3][None], n_val, axis=0)

    def val_loss():
        x_t = _corrupt(val_x0, val_ts, val_eps, schedule)
        ref_feats, _ = model.refnet.fwd(params, val_refs)
        guidance, _ = model.poseguider.fwd(params, val_poses, val_lmks)
        eps_hat, _ = model.backbone.fwd(params, x_t, val_ts, ref_feats, guidance,
                                        motion_enabled=False)
        return nn.mse_loss(eps_hat, val_eps)

    history = {"train": [], "val": [(0, val_loss())]}
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(train), size=min(batch, len(train)))
        x0 = np.stack([train[i][0] for i in idx])
        refs = np.stack([train[i][1] for i in idx])
        poses = np.stack([train[i][2] for i in idx])
        lmks = np.stack([train[i][3] for i in idx])
        ts = rng.integers(0, schedule.t_steps, size=len(idx))
        eps = rng.standard_normal(x0.shape).astype(np.float32)
        loss, g = stage1_loss_and_grads(model, params, x0, refs, poses, lmks,
                                        ts, eps, schedule)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite stage-1 loss at step {step}")
        nn.adam_step(params, g, state)
        history["train"].append((step, loss))
        if step % eval_every == 0 or step == steps:
            history["val"].append((step, val_loss()))
    return model, params, schedule, history


def _check_stage2_dataset(dataset):
    if not dataset:
        raise DatasetError("empty stage-2 dataset")
    for i, sample in enumerate(dataset):
        if len(sample) != 4:
            raise DatasetError(f"clip {i}: expected (frames, reference, pose images, ref landmark)")
        frames, _, poses, _ = sample
        if len(frames) != len(poses):
            raise DatasetError(f"clip {i}: {len(frames)} frames vs {len(poses)} pose images")


def train_stage2(dataset, model: Lmk2Video, params: dict, schedule: NoiseSchedule, *,
                 lr: float = 2e-3, weight_decay: float = 0.01, steps: int = 500,
                 eval_every: int = 50, seed: int = 0):
    """dataset: (frames (F,H,W,3), reference, pose images (F,H,W,3),
    ref-landmark image) uint8 clips.  Trains motion.* only, in place on a
    copy of params.  Returns (params, history)."""
    _check_stage2_dataset(dataset)
    params = {k: v.copy() for k, v in params.items()}
    trainable = [k for k in params if k.startswith("motion.")]
    state = nn.init_adam(params, lr=lr, weight_decay=weight_decay, trainable=trainable)
    rng = np.random.default_rng(seed)

    enc = [(np.stack([_encode_chw(fr) for fr in frames]), _encode_chw(rf),
            model.poseguider.normalize(ps), model.poseguider.normalize(rl))
           for frames, rf, ps, rl in dataset]
    train = enc[:-1] if len(enc) > 1 else enc
    val = enc[-1]

    val_rng = np.random.default_rng(seed + 1)
    n_val = 4
    val_ts = val_rng.integers(0, schedule.t_steps, size=n_val)
    val_eps = val_rng.standard_normal((n_val,) + val[0].shape).astype(np.float32)

    def val_loss():
        total = 0.0
        for j in range(n_val):
            x_t = _corrupt(val[0], np.full(val[0].shape[0], val_ts[j]), val_eps[j], schedule)
            ref_feats, _ = model.refnet.fwd(params, val[1])
            guidance, _ = model.poseguider.fwd(params, val[2], val[3])
            eps_hat, _ = model.backbone.fwd(params, x_t, int(val_ts[j]), ref_feats,
                                            guidance, motion_enabled=True)
            total += nn.mse_loss(eps_hat, val_eps[j])
        return total / n_val

    history = {"train": [], "val": [(0, val_loss())]}
    for step in range(1, steps + 1):
        i = int(rng.integers(0, len(train)))
        clip_x0, ref, poses, ref_lmk = train[i]
        t = int(rng.integers(0, schedule.t_steps))
        eps = rng.standard_normal(clip_x0.shape).astype(np.float32)
        loss, g = stage2_loss_and_grads(model, params, clip_x0, ref, poses, ref_lmk,
                                        t, eps, schedule)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite stage-2 loss at step {step}")
        nn.adam_step(params, g, state)
        history["train"].append((step, loss))
        if step % eval_every == 0 or step == steps:
            history["val"].append((step, val_loss()))
    return params, history


def adjacent_frame_delta(latents: np.ndarray) -> float:
    """Temporal-consistency proxy: mean |z[f+1] - z[f]| over a latent clip."""
    if latents.shape[0] < 2:
        return 0.0
    return float(np.mean(np.abs(np.diff(latents, axis=0))))
