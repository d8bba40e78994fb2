"""Procedural talking-face corpus with known audio-to-motion couplings.

Each identity gets noise-burst speech, a face whose lower lip opens with
the per-frame RMS of that audio (brows track low-band energy), a sinusoid
head-motion track, projected landmarks, pose images, and "video" frames
that composite the pose skeleton over a flat-color identity card.  The
couplings are exact by construction, so trainers have a learnable target
and tests have an oracle.

All geometry (templates, meshes, poses) is quantized to the 2**-20 dyadic
grid: sums and differences of grid values are exact in f64, which is what
makes retargeting on corpus data a bitwise round trip.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .audio import CANONICAL_SR, Waveform, extract_features, load_audio, save_wav
from .errors import DatasetError
from .files import (
    load_landmark_sequence,
    load_mesh_sequence,
    load_png,
    load_pose_sequence,
    save_landmark_sequence,
    save_mesh_sequence,
    save_png,
    save_pose_sequence,
)
from .geometry import (
    DESK_TOPOLOGY,
    MeshSequence,
    PoseSequence,
    canonical_face_mesh,
    project_sequence,
)
from .render import render_pose_image, render_sequence

GRID = 2.0 ** 20


def quantize(a: np.ndarray) -> np.ndarray:
    """Snap to the corpus coordinate grid (multiples of 2**-20)."""
    return np.round(np.asarray(a, dtype=np.float64) * GRID) / GRID


# -- audio ------------------------------------------------------------------


def synth_audio(rng: np.random.Generator, duration_s: float, sr: int = CANONICAL_SR) -> np.ndarray:
    """Band-limited noise shaped by a burst envelope at syllable rate."""
    n = int(round(duration_s * sr))
    if n < 1:
        raise DatasetError(f"audio duration {duration_s}s is empty at {sr} Hz")
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < 150.0) | (freqs > 3800.0)] = 0.0
    carrier = np.fft.irfft(spec, n)

    env = np.zeros(n)
    t = np.arange(n) / sr
    n_bursts = max(1, int(round(duration_s * float(rng.uniform(2.5, 4.5)))))
    for _ in range(n_bursts):
        length = float(rng.uniform(0.08, 0.25))
        onset = float(rng.uniform(0.0, max(duration_s - length, 1e-3)))
        inside = (t >= onset) & (t < onset + length)
        phase = (t[inside] - onset) / length
        env[inside] += 0.5 - 0.5 * np.cos(2.0 * np.pi * phase)  # hann burst
    env = np.minimum(env, 1.0)

    x = carrier * env
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (0.9 / peak)
    return x


def _frame_starts(n_samples: int, fps: float, sr: int, win_ms: float):
    # identical framing arithmetic to the audio frontend
    hop = int(round(sr / fps))
    win = int(round(win_ms / 1000.0 * sr))
    return n_samples // hop, hop, win


def frame_rms(samples: np.ndarray, fps: float, sr: int = CANONICAL_SR,
              win_ms: float = 25.0) -> np.ndarray:
    """Per-video-frame RMS with the frontend's framing (zero-padded tail)."""
    samples = np.asarray(samples, dtype=np.float64)
    t_frames, hop, win = _frame_starts(len(samples), fps, sr, win_ms)
    out = np.empty(t_frames)
    for t in range(t_frames):
        frame = samples[t * hop:t * hop + win]
        out[t] = np.sqrt(np.sum(frame ** 2) / win)  # pad-with-zeros == sum/win
    return out


def low_band_rms(samples: np.ndarray, fps: float, sr: int = CANONICAL_SR,
                 win_ms: float = 25.0, cutoff_hz: float = 500.0) -> np.ndarray:
    """Frame RMS of the brickwall low-passed signal (brow driver)."""
    samples = np.asarray(samples, dtype=np.float64)
    spec = np.fft.rfft(samples)
    spec[np.fft.rfftfreq(len(samples), 1.0 / sr) > cutoff_hz] = 0.0
    return frame_rms(np.fft.irfft(spec, len(samples)), fps, sr, win_ms)


# -- geometry ---------------------------------------------------------------


def identity_template(rng: np.random.Generator) -> np.ndarray:
    """Canonical face plus small per-vertex identity offsets, grid aligned."""
    return quantize(canonical_face_mesh() + rng.normal(0.0, 0.02, size=(DESK_TOPOLOGY.n_points, 3)))


def meshes_from_audio(w: Waveform, template: np.ndarray, fps: float = 25.0,
                      lip_gain: float = 0.25, brow_gain: float = 0.125,
                      win_ms: float = 25.0) -> MeshSequence:
    """Template animated by the audio: lower-lip y opens with frame RMS,
    brows rise with low-band RMS.

    RMS values are grid-quantized before the gain so offsets scale exactly:
    doubling a gain doubles every offset bitwise.
    """
    lip = float(lip_gain) * quantize(frame_rms(w.samples, fps, w.sample_rate, win_ms))
    brow = float(brow_gain) * quantize(low_band_rms(w.samples, fps, w.sample_rate, win_ms))
    frames = np.repeat(np.asarray(template, dtype=np.float64)[None], len(lip), axis=0)
    lo = DESK_TOPOLOGY.groups["lower_lip"]
    frames[:, lo[0]:lo[1], 1] += lip[:, None]  # y is down: lip drops open
    for name in ("right_brow", "left_brow"):
        g = DESK_TOPOLOGY.groups[name]
        frames[:, g[0]:g[1], 1] -= brow[:, None]
    return MeshSequence(frames=frames, fps=fps)


def pose_track(rng: np.random.Generator, t_frames: int, fps: float = 25.0,
               yaw_amp: float = 0.2, yaw_freq_hz: float = 0.5,
               pitch_amp: float = 0.1, pitch_freq_hz: float = 0.35,
               tz: float = 2.5) -> PoseSequence:
    """Low-frequency yaw/pitch sinusoids with seeded phases, fixed depth."""
    t = np.arange(t_frames) / fps
    yaw_phase, pitch_phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    poses = np.zeros((t_frames, 6))
    poses[:, 0] = pitch_amp * np.sin(2.0 * np.pi * pitch_freq_hz * t + pitch_phase)
    poses[:, 1] = yaw_amp * np.sin(2.0 * np.pi * yaw_freq_hz * t + yaw_phase)
    poses[:, 5] = tz
    return PoseSequence(poses=quantize(poses), fps=fps)


# -- appearance -------------------------------------------------------------


def identity_card(rng: np.random.Generator, image_size: int) -> np.ndarray:
    """Flat-color appearance target; range avoids every skeleton color."""
    color = rng.integers(40, 216, size=3).astype(np.uint8)
    return np.full((image_size, image_size, 3), color, dtype=np.uint8)


def composite_over_card(pose_image: np.ndarray, card: np.ndarray,
                        background=(0, 0, 0)) -> np.ndarray:
    """Skeleton pixels win; background pixels show the card."""
    bg = np.asarray(background, dtype=np.uint8)
    mask = np.all(pose_image == bg, axis=-1)  # (H, W)
    return np.where(mask[:, :, None], card, pose_image)


# -- corpus -----------------------------------------------------------------


def generate_synthetic_dataset(cfg: dict, seed: int, data_dir=None) -> Path:
    """Write the per-identity corpus tree; byte-identical per (cfg, seed).

    Layout per identity directory id_NNN/: audio.wav, template.json,
    meshes.json, poses.json, landmarks.json, ref.png, ref_landmarks.json,
    meta.json, pose_images/frame_*.png, frames/frame_*.png.
    """
    from .config import camera_from_config, style_from_config  # cycle guard

    syn = cfg["synthetic"]
    fps = float(cfg["audio_frontend"]["fps"])
    win_ms = float(cfg["audio_frontend"]["win_ms"])
    style = style_from_config(cfg)
    cam = camera_from_config(cfg)
    root = Path(data_dir if data_dir is not None else cfg["paths"]["data_dir"])
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"cannot create dataset directory {root}: {e}") from e

    for i in range(int(syn["n_identities"])):
        rng = np.random.default_rng([int(seed), i])
        ident = root / f"id_{i:03d}"
        try:
            ident.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DatasetError(f"cannot create identity directory {ident}: {e}") from e

        samples = synth_audio(rng, float(syn["duration_s"]))
        save_wav(ident / "audio.wav", samples)
        # animate from the audio as written to disk, not the float original:
        # PCM16 quantization must not open a train/infer mismatch
        w = load_audio(ident / "audio.wav")

        template = identity_template(rng)
        meshes = meshes_from_audio(w, template, fps, float(syn["lip_gain"]),
                                   float(syn["brow_gain"]), win_ms)
        poses = pose_track(rng, len(meshes), fps, float(syn["yaw_amp"]),
                           float(syn["yaw_freq_hz"]), float(syn["pitch_amp"]),
                           float(syn["pitch_freq_hz"]), float(syn["tz"]))
        lmks = project_sequence(meshes, poses, cam)

        save_mesh_sequence(ident / "template.json",
                           MeshSequence(frames=template[None], fps=fps))
        save_mesh_sequence(ident / "meshes.json", meshes)
        save_pose_sequence(ident / "poses.json", poses)
        save_landmark_sequence(ident / "landmarks.json", lmks)

        card = identity_card(rng, style.image_size)
        pose_images = render_sequence(lmks, DESK_TOPOLOGY, style)
        for t, img in enumerate(pose_images):
            save_png(ident / "pose_images" / f"frame_{t:05d}.png", img)
            save_png(ident / "frames" / f"frame_{t:05d}.png",
                     composite_over_card(img, card, style.background))

        neutral = PoseSequence(poses=np.array([[0.0, 0.0, 0.0, 0.0, 0.0, float(syn["tz"])]]), fps=fps)
        ref_lmks = project_sequence(MeshSequence(frames=template[None], fps=fps), neutral, cam)
        save_landmark_sequence(ident / "ref_landmarks.json", ref_lmks)
        ref_img = composite_over_card(
            render_pose_image(ref_lmks.points[0], DESK_TOPOLOGY, style), card, style.background)
        save_png(ident / "ref.png", ref_img)

        meta = {
            "identity": i,
            "seed": int(seed),
            "fps": fps,
            "image_size": style.image_size,
            "card_color": [int(c) for c in card[0, 0]],
            "lip_gain": float(syn["lip_gain"]),
            "brow_gain": float(syn["brow_gain"]),
            "tz": float(syn["tz"]),
            "n_frames": len(meshes),
        }
        with open(ident / "meta.json", "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=1, sort_keys=True)
            f.write("\n")
    return root


def list_identities(data_dir) -> list:
    root = Path(data_dir)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    out = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("id_"))
    if not out:
        raise DatasetError(f"no id_* identity directories under {root}")
    return out


def load_identity(ident_dir) -> dict:
    """Everything one identity's directory holds, decoded and validated."""
    ident = Path(ident_dir)
    with open(ident / "meta.json", encoding="utf-8") as f:
        meta = json.load(f)
    n = int(meta["n_frames"])
    return {
        "audio": load_audio(ident / "audio.wav"),
        "template": load_mesh_sequence(ident / "template.json").frames[0],
        "meshes": load_mesh_sequence(ident / "meshes.json"),
        "poses": load_pose_sequence(ident / "poses.json"),
        "landmarks": load_landmark_sequence(ident / "landmarks.json"),
        "ref_landmarks": load_landmark_sequence(ident / "ref_landmarks.json"),
        "ref_image": load_png(ident / "ref.png"),
        "pose_images": [load_png(ident / "pose_images" / f"frame_{t:05d}.png") for t in range(n)],
        "frames": [load_png(ident / "frames" / f"frame_{t:05d}.png") for t in range(n)],
        "meta": meta,
    }
