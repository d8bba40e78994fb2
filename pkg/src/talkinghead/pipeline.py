"""End-to-end plumbing: corpus loaders, stage trainers, and inference.

Every stage runs behind a tag so failures surface as
"[stage_name] reason" and the CLI can map them to exit codes without
guessing which half of the pipeline fell over.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import audio2mesh, audio2pose
from .audio import extract_features, load_audio
from .checkpoint import load_checkpoint, save_checkpoint
from .config import camera_from_config, effective_training, frontend_kwargs, style_from_config
from .diffusion import (
    Lmk2Video,
    decode_latent,
    encode_latent,
    from_chw,
    make_schedule,
    to_chw,
    train_stage1,
    train_stage2,
)
from .diffusion.model import PoseGuider
from .errors import PipelineError
from .files import (
    load_landmark_sequence,
    load_png,
    save_landmark_sequence,
    save_mesh_sequence,
    save_png,
    save_pose_sequence,
)
from .geometry import DESK_TOPOLOGY, project_sequence
from .render import render_pose_image, render_sequence
from .synthetic import list_identities, load_identity

A2M, A2P, L2V = "audio2mesh", "audio2pose", "lmk2video"


def _tagged(stage: str, e: Exception) -> PipelineError:
    msg = str(e)
    if msg.startswith(f"[{stage}]"):
        return e if isinstance(e, PipelineError) else PipelineError(msg)
    return PipelineError(f"[{stage}] {msg}")


def _ckpt_dir(cfg: dict, name: str) -> Path:
    return Path(cfg["paths"]["ckpt_dir"]) / name


def _load_ckpt(cfg: dict, name: str) -> dict:
    d = _ckpt_dir(cfg, name)
    if not (d / "manifest.json").is_file():
        raise PipelineError(f"[{name}] checkpoint not found: {d}")
    try:
        return load_checkpoint(d)
    except Exception as e:
        raise _tagged(name, e) from e


def _check_shapes(stage: str, expected: dict, loaded: dict) -> None:
    missing = sorted(set(expected) - set(loaded))
    extra = sorted(set(loaded) - set(expected))
    if missing or extra:
        raise PipelineError(
            f"[{stage}] checkpoint parameter set mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for k in expected:
        if tuple(expected[k].shape) != tuple(loaded[k].shape):
            raise PipelineError(
                f"[{stage}] checkpoint shape mismatch for {k!r}: "
                f"config wants {expected[k].shape}, file has {loaded[k].shape}")


def _build_l2v(cfg: dict):
    sec = cfg["lmk2video"]
    model = Lmk2Video(base=int(sec["base"]), emb_dim=int(sec["emb_dim"]),
                      n_heads=int(sec["n_heads"]), max_frames=int(sec["max_frames"]),
                      guider_base=int(sec["guider_base"]))
    schedule = make_schedule(int(sec["t_steps"]), float(sec["beta_start"]), float(sec["beta_end"]))
    return model, schedule


# -- corpus -> trainer datasets ---------------------------------------------


def _corpus(cfg: dict, data_dir=None):
    root = data_dir if data_dir is not None else cfg["paths"]["data_dir"]
    return [load_identity(p) for p in list_identities(root)]


def build_feature_pairs(cfg: dict, target: str, data_dir=None) -> list:
    """(AudioFeatureSequence, MeshSequence|PoseSequence) pairs per identity.

    Each head extracts its own features so the two models stay separable
    down to the frontend.
    """
    fps, fcfg = frontend_kwargs(cfg)
    pairs = []
    for rec in _corpus(cfg, data_dir):
        feats = extract_features(rec["audio"], fps, dict(fcfg))
        pairs.append((feats, rec["meshes"] if target == "mesh" else rec["poses"]))
    return pairs


def _ref_landmark_image(rec: dict, style) -> np.ndarray:
    return render_pose_image(rec["ref_landmarks"].points[0], DESK_TOPOLOGY, style)


def build_stage1_dataset(cfg: dict, data_dir=None) -> list:
    """(target frame, reference image, pose image, ref landmark image) per
    corpus frame, all uint8 (H, W, 3)."""
    style = style_from_config(cfg)
    out = []
    for rec in _corpus(cfg, data_dir):
        ref_lmk = _ref_landmark_image(rec, style)
        for frame, pose_img in zip(rec["frames"], rec["pose_images"]):
            out.append((frame, rec["ref_image"], pose_img, ref_lmk))
    return out


def build_stage2_clips(cfg: dict, data_dir=None) -> list:
    """Non-overlapping clip windows: (frames, reference, pose images, ref
    landmark image) with frames/poses stacked (F, H, W, 3)."""
    style = style_from_config(cfg)
    f = int(cfg["lmk2video"]["clip_frames"])
    clips = []
    for rec in _corpus(cfg, data_dir):
        ref_lmk = _ref_landmark_image(rec, style)
        frames = np.stack(rec["frames"])
        poses = np.stack(rec["pose_images"])
        for start in range(0, len(frames) - 1, f):
            stop = min(start + f, len(frames))
            if stop - start < 2:
                break
            clips.append((frames[start:stop], rec["ref_image"], poses[start:stop], ref_lmk))
    return clips


# -- training commands ------------------------------------------------------


def train_audio2mesh_command(cfg: dict, data_dir=None) -> dict:
    t = effective_training(cfg, A2M)
    try:
        pairs = build_feature_pairs(cfg, "mesh", data_dir)
        params, history = audio2mesh.train_audio2mesh(
            pairs, hidden=int(cfg[A2M]["hidden"]), lr=t["lr"], steps=t["steps"],
            batch=t["batch"], seed=t["seed"])
        save_checkpoint(params, _ckpt_dir(cfg, A2M))
    except PipelineError as e:
        raise _tagged(A2M, e) from e
    return history


def train_audio2pose_command(cfg: dict, data_dir=None) -> dict:
    t = effective_training(cfg, A2P)
    sec = cfg[A2P]
    try:
        pairs = build_feature_pairs(cfg, "pose", data_dir)
        _, params, history = audio2pose.train_audio2pose(
            pairs, d_model=int(sec["d_model"]), n_layers=int(sec["n_layers"]),
            n_heads=int(sec["n_heads"]), d_ff=int(sec["d_ff"]),
            max_frames=int(sec["max_frames"]), lr=t["lr"], steps=t["steps"],
            batch=t["batch"], seed=t["seed"])
        save_checkpoint(params, _ckpt_dir(cfg, A2P))
    except PipelineError as e:
        raise _tagged(A2P, e) from e
    return history


def train_lmk2video_command(cfg: dict, stage: int, data_dir=None) -> dict:
    cfg = dict(cfg, training=dict(cfg["training"], stage=int(stage)))
    t = effective_training(cfg, L2V)
    model, schedule = _build_l2v(cfg)
    wd = float(cfg[L2V]["weight_decay"])
    try:
        if stage == 1:
            dataset = build_stage1_dataset(cfg, data_dir)
            _, params, _, history = train_stage1(
                dataset, model=model, schedule=schedule, lr=t["lr"], weight_decay=wd,
                steps=t["steps"], batch=t["batch"], seed=t["seed"])
        else:
            params = _load_ckpt(cfg, L2V)
            _check_shapes(L2V, model.init_params(0), params)
            clips = build_stage2_clips(cfg, data_dir)
            params, history = train_stage2(
                clips, model, params, schedule, lr=t["lr"], weight_decay=wd,
                steps=t["steps"], seed=t["seed"])
        save_checkpoint(params, _ckpt_dir(cfg, L2V))
    except PipelineError as e:
        raise _tagged(L2V, e) from e
    return history


# -- inference --------------------------------------------------------------


def infer_end_to_end(audio_path, ref_image_path, ref_landmark_path,
                     cfg: dict, seed: int = 0, out_dir=None) -> Path:
    """Audio + reference portrait -> frame directory.

    Emits floor(duration * fps) PNG frames under <out>/frames plus the
    intermediate mesh/pose/landmark sequences and pose images; pure
    function of (inputs, config, seed).
    """
    fps, fcfg = frontend_kwargs(cfg)
    out = Path(out_dir if out_dir is not None else cfg["paths"]["out_dir"])

    try:
        wave = load_audio(audio_path)
    except PipelineError as e:
        raise _tagged("audio_frontend", e) from e

    # each head gets its own frontend pass (separable training contract)
    try:
        feats_mesh = extract_features(wave, fps, dict(fcfg))
        feats_pose = extract_features(wave, fps, dict(fcfg))
    except PipelineError as e:
        raise _tagged("audio_frontend", e) from e

    params_m = _load_ckpt(cfg, A2M)
    try:
        _check_shapes(A2M, audio2mesh.init_mesh_regressor(
            feats_mesh.frames.shape[1], hidden=int(cfg[A2M]["hidden"])), params_m)
        meshes = audio2mesh.mesh_forward(params_m, feats_mesh)
    except PipelineError as e:
        raise _tagged(A2M, e) from e

    params_p = _load_ckpt(cfg, A2P)
    sec = cfg[A2P]
    try:
        decoder = audio2pose.PoseDecoder(
            feats_pose.frames.shape[1], int(sec["d_model"]), int(sec["n_layers"]),
            int(sec["n_heads"]), int(sec["d_ff"]), int(sec["max_frames"]))
        _check_shapes(A2P, decoder.init_params(0), params_p)
        poses = decoder.decode_autoregressive(params_p, feats_pose)
    except PipelineError as e:
        raise _tagged(A2P, e) from e

    try:
        lmks = project_sequence(meshes, poses, camera_from_config(cfg))
    except PipelineError as e:
        raise _tagged("face_geometry", e) from e

    style = style_from_config(cfg)
    try:
        pose_images = render_sequence(lmks, DESK_TOPOLOGY, style)
    except PipelineError as e:
        raise _tagged("pose_render", e) from e

    params_v = _load_ckpt(cfg, L2V)
    model, schedule = _build_l2v(cfg)
    vsec = cfg[L2V]
    try:
        _check_shapes(L2V, model.init_params(0), params_v)
        ref_img = load_png(ref_image_path)
        ref_lmk_img = render_pose_image(
            load_landmark_sequence(ref_landmark_path).points[0], DESK_TOPOLOGY, style)
        ref_latent = to_chw(encode_latent(ref_img))
        pose_stack = PoseGuider.normalize(np.stack(pose_images))
        ref_lmk_norm = PoseGuider.normalize(ref_lmk_img)

        clip_len = int(vsec["clip_frames"])
        steps = int(vsec["sample_steps"])
        frames_out = []
        for c, start in enumerate(range(0, len(pose_images), clip_len)):
            chunk = pose_stack[start:start + clip_len]
            lat = model.generate_clip(params_v, schedule, chunk, ref_latent,
                                      ref_lmk_norm, steps=steps, seed=int(seed) + c)
            for f in range(lat.shape[0]):
                frames_out.append(decode_latent(from_chw(lat[f])))
    except PipelineError as e:
        raise _tagged(L2V, e) from e

    save_mesh_sequence(out / "meshes.json", meshes)
    save_pose_sequence(out / "poses.json", poses)
    save_landmark_sequence(out / "landmarks.json", lmks)
    for t, img in enumerate(pose_images):
        save_png(out / "pose_images" / f"frame_{t:05d}.png", img)
    for t, img in enumerate(frames_out):
        save_png(out / "frames" / f"frame_{t:05d}.png", img)
    return out
