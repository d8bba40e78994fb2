"""Latent-diffusion video generation: schedule, codec, networks, training."""

from .latent import decode_latent, encode_latent, from_chw, to_chw
from .model import DenoiseBackbone, Lmk2Video, PoseGuider, ReferenceNet
from .schedule import NoiseSchedule, ddim_sample, make_schedule, q_sample
from .training import (
    adjacent_frame_delta,
    train_stage1,
    train_stage2,
)

__all__ = [
    "DenoiseBackbone",
    "Lmk2Video",
    "NoiseSchedule",
    "PoseGuider",
    "ReferenceNet",
    "adjacent_frame_delta",
    "ddim_sample",
    "decode_latent",
    "encode_latent",
    "from_chw",
    "make_schedule",
    "q_sample",
    "to_chw",
    "train_stage1",
    "train_stage2",
]
