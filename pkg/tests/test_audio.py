"""Audio frontend tests."""

import math
import wave

import numpy as np
import pytest

from talkinghead import audio
from talkinghead.errors import AudioFormatError, EmptyAudioError


def write_pcm16(path, samples, sr, channels=1):
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(2)
        wf.setframerate(sr)
        wf.writeframes(pcm.tobytes())


def test_load_all_zero_pcm(tmp_path):
    path = tmp_path / "z.wav"
    write_pcm16(path, np.zeros(1600), 16000)
    w = audio.load_audio(path)
    assert w.sample_rate == 16000
    np.testing.assert_array_equal(w.samples, np.zeros(1600))


def test_load_stereo_downmix_cancels(tmp_path):
    path = tmp_path / "s.wav"
    frames = np.empty(200)
    frames[0::2] = 0.5
    frames[1::2] = -0.5
    write_pcm16(path, frames, 16000, channels=2)
    w = audio.load_audio(path)
    assert len(w.samples) == 100
    assert np.abs(w.samples).max() < 1e-4  # +-1 LSB of PCM16 rounding


def test_load_resamples_8k_to_16k(tmp_path):
    path = tmp_path / "r.wav"
    write_pcm16(path, np.sin(np.arange(8000) * 0.01), 8000)
    w = audio.load_audio(path)
    assert len(w.samples) == 16000
    assert w.sample_rate == 16000


def test_load_rejects_non_pcm16(tmp_path):
    path = tmp_path / "b.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(1)
        wf.setframerate(16000)
        wf.writeframes(b"\x00" * 100)
    with pytest.raises(AudioFormatError):
        audio.load_audio(path)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "g.wav"
    path.write_bytes(b"not a wav at all")
    with pytest.raises(AudioFormatError):
        audio.load_audio(path)


def test_load_empty_audio(tmp_path):
    path = tmp_path / "e.wav"
    write_pcm16(path, np.zeros(0), 16000)
    with pytest.raises(EmptyAudioError):
        audio.load_audio(path)


def test_load_amplitude_bounded(tmp_path):
    path = tmp_path / "a.wav"
    write_pcm16(path, np.ones(100), 16000)
    w = audio.load_audio(path)
    assert np.abs(w.samples).max() <= 1.0


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.9, 0.9, 1600)
    path = tmp_path / "rt.wav"
    audio.save_wav(path, x)
    w = audio.load_audio(path)
    np.testing.assert_allclose(w.samples, x, atol=1.0 / 32767)


# ---------------------------------------------------------------------------
# feature extraction


def make_waveform(seconds=2.0, seed=1):
    rng = np.random.default_rng(seed)
    return audio.Waveform(samples=rng.uniform(-0.5, 0.5, int(seconds * 16000)), sample_rate=16000)


def test_two_seconds_gives_50_frames():
    feats = audio.extract_features(make_waveform(2.0), fps=25)
    assert feats.frames.shape[0] == 50  # floor(32000 / 640)


def test_feature_dim_is_n_mels():
    feats = audio.extract_features(make_waveform(1.0), fps=25)
    assert feats.frames.shape[1] == 26
    feats13 = audio.extract_features(make_waveform(1.0), fps=25, config={"n_mels": 13})
    assert feats13.frames.shape[1] == 13


def test_silence_rows_identical_log_floor():
    w = audio.Waveform(samples=np.zeros(16000), sample_rate=16000)
    feats = audio.extract_features(w, fps=25, config={"floor": 1e-8})
    expect = math.log(1e-8)
    np.testing.assert_allclose(feats.frames, np.full_like(feats.frames, expect), rtol=1e-6)
    assert np.all(feats.frames[0] == feats.frames[1])


def test_features_deterministic():
    w = make_waveform(1.0, seed=7)
    a = audio.extract_features(w, fps=25).frames
    b = audio.extract_features(audio.Waveform(w.samples.copy(), 16000), fps=25).frames
    np.testing.assert_array_equal(a, b)


def test_prefix_alignment():
    # first k rows of a k*hop prefix match the full run (default win < hop)
    w = make_waveform(2.0, seed=3)
    hop = 640
    full = audio.extract_features(w, fps=25).frames
    for k in (1, 10, 31):
        prefix = audio.Waveform(samples=w.samples[:k * hop], sample_rate=16000)
        rows = audio.extract_features(prefix, fps=25).frames
        np.testing.assert_array_equal(rows, full[:k])


def test_shorter_than_hop_raises():
    w = audio.Waveform(samples=np.zeros(100), sample_rate=16000)
    with pytest.raises(EmptyAudioError):
        audio.extract_features(w, fps=25)


def test_unknown_backbone_rejected():
    with pytest.raises(AudioFormatError):
        audio.extract_features(make_waveform(1.0), fps=25, config={"backbone": "wav9000"})


def test_registered_backbone_used():
    def stub(w, fps, config):
        t = len(w.samples) // int(round(w.sample_rate / fps))
        return np.ones((t, 4), dtype=np.float32)

    audio.register_backbone("stub4", stub)
    try:
        feats = audio.extract_features(make_waveform(1.0), fps=25, config={"backbone": "stub4"})
        assert feats.backbone_id == "stub4"
        assert feats.frames.shape == (25, 4)
    finally:
        audio._BACKBONES.pop("stub4")


def test_mel_filterbank_matches_triangle_oracle():
    n_mels, n_fft, sr = 4, 64, 16000
    bank = audio.mel_filterbank(n_mels, n_fft, sr)

    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def mel_inv(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    lo_m, hi_m = mel(0.0), mel(sr / 2.0)
    edges = [mel_inv(lo_m + (hi_m - lo_m) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    for m in range(n_mels):
        for k in range(n_fft // 2 + 1):
            f = k * sr / n_fft
            rising = (f - edges[m]) / (edges[m + 1] - edges[m])
            falling = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1])
            expect = max(0.0, min(rising, falling))
            assert abs(bank[m, k] - expect) < 1e-9


def test_resample_features_constant_and_length():
    frames = np.tile(np.array([[1.0, 2.0]], dtype=np.float32), (50, 1))
    out = audio.resample_features(frames, 50.0, 25.0)
    assert out.shape == (25, 2)
    np.testing.assert_allclose(out, np.tile(np.array([[1.0, 2.0]]), (25, 1)), rtol=1e-6)
    up = audio.resample_features(frames, 25.0, 50.0)
    assert up.shape == (100, 2)
