"""Audio loading and per-video-frame feature extraction.

The feature backbone is pluggable; the built-in "logmel" backbone is a
deterministic log-mel filterbank standing in for a pretrained speech
encoder.  One feature frame is emitted per video frame (hop = sr / fps),
so no interpolation layer is needed between audio features and mesh/pose
frames.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import AudioFormatError, EmptyAudioError, ShapeError

CANONICAL_SR = 16000


@dataclass
class Waveform:
    samples: np.ndarray  # mono float64 in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError(f"waveform must be mono 1-D, got shape {self.samples.shape}")


@dataclass
class AudioFeatureSequence:
    frames: np.ndarray  # (T, D) float32
    fps: float
    backbone_id: str

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise ShapeError(f"feature frames must be (T, D), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ShapeError("non-finite audio features")

    def __len__(self):
        return self.frames.shape[0]


def load_audio(path) -> Waveform:
    """Read a RIFF/WAV PCM16 file as canonical mono 16 kHz in [-1, 1].

    Stereo is downmixed by channel mean; other sample rates are linearly
    resampled.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            sr = wf.getframerate()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except wave.Error as e:
        raise AudioFormatError(f"{path}: not a readable WAV file ({e})") from e
    if sampwidth != 2:
        raise AudioFormatError(f"{path}: only PCM16 supported, got sample width {sampwidth}")
    if n_channels not in (1, 2):
        raise AudioFormatError(f"{path}: expected 1 or 2 channels, got {n_channels}")
    if n == 0:
        raise EmptyAudioError(f"{path}: zero audio frames")
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if n_channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    x = x / 32768.0
    if sr != CANONICAL_SR:
        n_out = int(round(len(x) * CANONICAL_SR / sr))
        src_pos = np.arange(n_out, dtype=np.float64) * (sr / CANONICAL_SR)
        x = np.interp(src_pos, np.arange(len(x), dtype=np.float64), x)
    return Waveform(samples=x, sample_rate=CANONICAL_SR)


def save_wav(path, samples: np.ndarray, sample_rate: int = CANONICAL_SR) -> None:
    """Write mono float samples in [-1, 1] as PCM16.

    Scaling matches load_audio (x * 32768, clipped at +32767) so a round
    trip is exact to half an LSB.
    """
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.astype("<i2").tobytes())


# ---------------------------------------------------------------------------
# log-mel backbone


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sr: int) -> np.ndarray:
    """Triangular mel filters, (n_mels, n_fft//2 + 1) float64."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(sr / 2.0), n_mels + 2))
    bin_freqs = np.arange(n_fft // 2 + 1, dtype=np.float64) * (sr / n_fft)
    weights = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def _logmel_backbone(w: Waveform, fps: float, config: dict) -> np.ndarray:
    n_mels = int(config.get("n_mels", 26))
    win_ms = float(config.get("win_ms", 25.0))
    floor = float(config.get("floor", 1e-8))
    sr = w.sample_rate
    hop = int(round(sr / fps))
    win = int(round(win_ms / 1000.0 * sr))
    n = len(w.samples)
    t_frames = n // hop
    if t_frames < 1:
        raise EmptyAudioError(f"audio shorter than one hop ({n} samples < {hop})")
    bank = mel_filterbank(n_mels, win, sr)
    feats = np.empty((t_frames, n_mels), dtype=np.float64)
    for t in range(t_frames):
        frame = w.samples[t * hop:t * hop + win]
        if len(frame) < win:
            frame = np.concatenate([frame, np.zeros(win - len(frame))])
        spectrum = np.abs(np.fft.rfft(frame)) ** 2
        feats[t] = np.log(bank @ spectrum + floor)
    return feats.astype(np.float32)


_BACKBONES = {"logmel": _logmel_backbone}


def register_backbone(name: str, fn) -> None:
    """Adapter seam: fn(waveform, fps, config) -> (T, D) float array."""
    _BACKBONES[name] = fn


def extract_features(w: Waveform, fps: float = 25.0, config: dict | None = None) -> AudioFeatureSequence:
    """Per-video-frame features: frame t covers samples [t*hop, t*hop + win).

    T = floor(n_samples / hop) with hop = round(sr / fps); the window tail
    past the signal end is zero padded.
    """
    if fps <= 0:
        raise ShapeError(f"fps must be positive, got {fps}")
    config = dict(config or {})
    backbone_id = config.pop("backbone", "logmel")
    if backbone_id not in _BACKBONES:
        raise AudioFormatError(f"unknown audio backbone {backbone_id!r}")
    frames = _BACKBONES[backbone_id](w, fps, config)
    return AudioFeatureSequence(frames=frames, fps=fps, backbone_id=backbone_id)


def resample_features(frames: np.ndarray, src_fps: float, dst_fps: float) -> np.ndarray:
    """Linear time-resampling hook for backbones running at a foreign frame
    rate (e.g. 50 Hz speech encoders vs 25 fps video)."""
    frames = np.asarray(frames)
    t_src = frames.shape[0]
    if t_src == 0:
        raise EmptyAudioError("cannot resample an empty feature sequence")
    t_dst = int(t_src * dst_fps / src_fps)
    if t_dst < 1:
        raise EmptyAudioError("resampling target is empty")
    src_idx = np.arange(t_src, dtype=np.float64)
    dst_pos = np.arange(t_dst, dtype=np.float64) * (src_fps / dst_fps)
    out = np.empty((t_dst, frames.shape[1]), dtype=frames.dtype)
    for d in range(frames.shape[1]):
        out[:, d] = np.interp(dst_pos, src_idx, frames[:, d].astype(np.float64))
    return out
