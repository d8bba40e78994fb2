"""Pipeline configuration: one nested JSON document, strict keys.

A config is a plain dict shaped like DEFAULTS.  Loading merges user values
over the defaults and rejects any key the defaults don't know, naming the
full dotted path, so typos fail loudly instead of silently training with a
default.  Every CLI run prints the fully resolved document.

The `full_scale_lr` entries record the production-recipe learning rate
(1e-5); the `lr` entries are desk-scale values tuned so the tiny models
actually move within the test step budgets.
"""

from __future__ import annotations

import copy
import json

from .errors import ConfigError
from .geometry import CameraIntrinsics
from .render import RenderStyle

DEFAULTS = {
    "audio_frontend": {
        "backbone": "logmel",
        "n_mels": 26,
        "win_ms": 25.0,
        "floor": 1e-8,
        "fps": 25.0,
    },
    "audio2mesh": {
        "hidden": 256,
        "lr": 1e-3,
        "steps": 500,
        "batch": 64,
        "full_scale_lr": 1e-5,
    },
    "audio2pose": {
        "d_model": 64,
        "n_layers": 2,
        "n_heads": 4,
        "d_ff": 128,
        "max_frames": 512,
        "lr": 5e-3,
        "steps": 800,
        "batch": 2,
        "full_scale_lr": 1e-5,
    },
    "camera": {
        # None focal/center values derive from image_size (0.9*s, s/2)
        "image_size": 64,
        "fx": None,
        "fy": None,
        "cx": None,
        "cy": None,
        "z_near": 0.1,
    },
    "render": {
        "image_size": 64,
        "background": [0, 0, 0],
        "group_color": [255, 255, 255],
        "upper_lip_color": [255, 0, 0],
        "lower_lip_color": [0, 0, 255],
        "line_thickness": 1,
    },
    "lmk2video": {
        "base": 32,
        "guider_base": 8,
        "emb_dim": 128,
        "n_heads": 4,
        "max_frames": 64,
        "t_steps": 100,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "train_size": 32,
        "infer_size": 64,
        "clip_frames": 8,
        "sample_steps": 20,
        "stage1_lr": 1e-3,
        "stage1_steps": 2000,
        "stage1_batch": 4,
        "stage2_lr": 2e-3,
        "stage2_steps": 500,
        "weight_decay": 0.01,
        "full_scale_lr": 1e-5,
    },
    "training": {
        # non-None entries override the per-model settings above
        "stage": 1,
        "lr": None,
        "steps": None,
        "batch": None,
        "seed": 0,
    },
    "synthetic": {
        "n_identities": 3,
        "duration_s": 2.0,
        "lip_gain": 0.25,
        "brow_gain": 0.125,
        "yaw_amp": 0.2,
        "yaw_freq_hz": 0.5,
        "pitch_amp": 0.1,
        "pitch_freq_hz": 0.35,
        "tz": 2.5,
    },
    "paths": {
        "data_dir": "data",
        "ckpt_dir": "ckpts",
        "out_dir": "out",
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, doc: dict, path: str) -> None:
    for key, value in doc.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here!r} must be a section, got {type(value).__name__}")
            _merge(base[key], value, here)
        else:
            if isinstance(value, dict):
                raise ConfigError(f"{here!r} is a value, not a section")
            base[key] = value


def from_dict(doc: dict) -> dict:
    """Defaults overlaid with doc; unknown keys rejected by dotted path."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object, got {type(doc).__name__}")
    cfg = default_config()
    _merge(cfg, doc, "")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return from_dict(doc)


def resolved_json(cfg: dict) -> str:
    """Canonical dump of the fully resolved config, printed by every run."""
    return json.dumps(cfg, indent=2, sort_keys=True)


def camera_from_config(cfg: dict) -> CameraIntrinsics:
    c = cfg["camera"]
    s = float(c["image_size"])
    return CameraIntrinsics(
        fx=0.9 * s if c["fx"] is None else float(c["fx"]),
        fy=0.9 * s if c["fy"] is None else float(c["fy"]),
        cx=s / 2.0 if c["cx"] is None else float(c["cx"]),
        cy=s / 2.0 if c["cy"] is None else float(c["cy"]),
        z_near=float(c["z_near"]),
    )


def style_from_config(cfg: dict) -> RenderStyle:
    r = cfg["render"]
    return RenderStyle(
        image_size=int(r["image_size"]),
        background=tuple(r["background"]),
        group_color=tuple(r["group_color"]),
        upper_lip_color=tuple(r["upper_lip_color"]),
        lower_lip_color=tuple(r["lower_lip_color"]),
        line_thickness=int(r["line_thickness"]),
    )


def frontend_kwargs(cfg: dict) -> tuple:
    """(fps, config dict for extract_features) from the frontend section."""
    f = dict(cfg["audio_frontend"])
    fps = float(f.pop("fps"))
    return fps, f


def effective_training(cfg: dict, section: str) -> dict:
    """Per-model training settings after the training{} section's overrides.

    Returns {"lr", "steps", "batch", "seed"}; for "lmk2video" the stage in
    training.stage picks between the stage1_*/stage2_* entries (stage 2 has
    no batch dimension: one clip per step).
    """
    t = cfg["training"]
    if section == "lmk2video":
        stage = int(t["stage"])
        if stage not in (1, 2):
            raise ConfigError(f"training.stage must be 1 or 2, got {stage}")
        sec = cfg["lmk2video"]
        out = {"lr": sec[f"stage{stage}_lr"], "steps": sec[f"stage{stage}_steps"],
               "batch": sec["stage1_batch"] if stage == 1 else None}
    else:
        if section not in ("audio2mesh", "audio2pose"):
            raise ConfigError(f"no training settings for section {section!r}")
        sec = cfg[section]
        out = {"lr": sec["lr"], "steps": sec["steps"], "batch": sec["batch"]}
    for key in ("lr", "steps", "batch"):
        if t[key] is not None:
            out[key] = t[key]
    out["lr"] = float(out["lr"])
    out["steps"] = int(out["steps"])
    if out["batch"] is not None:
        out["batch"] = int(out["batch"])
    out["seed"] = int(t["seed"])
    return out
