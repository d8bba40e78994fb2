"""Pose decoder tests: masking, bitwise causality and replay, a hand-evaluated
tiny transformer, gradchecks, and training."""

import numpy as np
import pytest

from talkinghead import audio2pose, nn
from talkinghead.audio import AudioFeatureSequence
from talkinghead.audio2pose import PoseDecoder, causal_mask, init_pose_decoder, train_audio2pose
from talkinghead.errors import DatasetError, DivergenceError, ShapeError
from talkinghead.geometry import PoseSequence

P = audio2pose.PREFIX


def feats_seq(frames, fps=25.0):
    return AudioFeatureSequence(frames=np.asarray(frames, dtype=np.float32), fps=fps,
                                backbone_id="logmel")


# -- mask -------------------------------------------------------------------


def test_causal_mask_t1():
    m = causal_mask(1)
    assert m.shape == (1, 1) and m.dtype == bool and m[0, 0]


def test_causal_mask_t3_lower_triangular():
    m = causal_mask(3)
    assert m.sum() == 6  # T(T+1)/2
    assert np.array_equal(m, np.tril(np.ones((3, 3), dtype=bool)))
    assert m[2].all()  # last row fully allowed


def test_causal_mask_rejects_zero():
    with pytest.raises(ShapeError):
        causal_mask(0)


# -- init -------------------------------------------------------------------


def test_init_zero_head_and_determinism():
    _, a = init_pose_decoder(13, seed=3)
    _, b = init_pose_decoder(13, seed=3)
    assert not a[f"{P}.head.w"].any()
    assert not a[f"{P}.head.b"].any()
    assert sorted(a) == sorted(b)
    for k in a:
        assert np.array_equal(a[k], b[k])


def test_init_rejects_bad_heads():
    with pytest.raises(ShapeError):
        PoseDecoder(8, d_model=6, n_heads=4)


def test_position_table_row0():
    dec, _ = init_pose_decoder(4, d_model=8, max_frames=16)
    assert np.allclose(dec.pos[0], [0, 1, 0, 1, 0, 1, 0, 1])


# -- zero-init behavior -----------------------------------------------------


def test_zero_head_teacher_forced_all_zero():
    dec, params = init_pose_decoder(6, seed=0)
    rng = np.random.default_rng(1)
    audio = rng.normal(size=(7, 6)).astype(np.float32)
    gt = rng.normal(0, 0.2, size=(7, 6)).astype(np.float64)
    pred = dec.decode_teacher_forced(params, audio, gt)
    assert pred.shape == (7, 6)
    assert not pred.any()


def test_zero_head_autoregressive_all_zero():
    dec, params = init_pose_decoder(5, seed=0)
    audio = feats_seq(np.random.default_rng(2).normal(size=(50, 5)))
    out = dec.decode_autoregressive(params, audio)
    assert isinstance(out, PoseSequence)
    assert len(out) == 50  # 2 s at 25 fps
    assert out.fps == 25.0
    assert not out.poses.any()


# -- causality and replay (bitwise) -----------------------------------------


def trained_like_decoder(feat_dim=6, t_len=6, seed=9):
    """Random decoder whose head is nonzero so outputs carry information."""
    dec, params = init_pose_decoder(feat_dim, d_model=16, n_layers=2, n_heads=2,
                                    d_ff=24, max_frames=64, seed=seed)
    rng = np.random.default_rng(seed + 100)
    params[f"{P}.head.w"] = rng.normal(0, 0.2, size=params[f"{P}.head.w"].shape).astype(np.float32)
    params[f"{P}.head.b"] = rng.normal(0, 0.05, size=6).astype(np.float32)
    audio = rng.normal(size=(t_len, feat_dim)).astype(np.float32)
    return dec, params, audio


def test_teacher_forced_causality_bitwise():
    dec, params, audio = trained_like_decoder(t_len=6)
    rng = np.random.default_rng(0)
    gt = rng.normal(0, 0.3, size=(6, 6))
    base = dec.decode_teacher_forced(params, audio, gt)
    for k in (0, 2, 4):
        bumped = gt.copy()
        bumped[k] += 1.0
        pred = dec.decode_teacher_forced(params, audio, bumped)
        # frames before k+1 bit-identical, and the perturbation is visible after
        assert np.array_equal(pred[: k + 1], base[: k + 1])
        assert not np.array_equal(pred[k + 1 :], base[k + 1 :])


def test_autoregressive_replay_bitwise():
    dec, params, audio = trained_like_decoder(t_len=8)
    out = dec.decode_autoregressive(params, audio)
    replay = dec.decode_teacher_forced(params, audio, out.poses)
    assert np.array_equal(replay, out.poses.astype(np.float32))


def test_autoregressive_seed_pose_changes_start():
    dec, params, audio = trained_like_decoder(t_len=4)
    default = dec.decode_autoregressive(params, audio)
    seeded = dec.decode_autoregressive(params, audio, seed_pose=np.full(6, 0.5))
    assert not np.array_equal(default.poses, seeded.poses)


def test_length_contract_and_max_frames():
    dec, params = init_pose_decoder(4, max_frames=8)
    with pytest.raises(ShapeError):
        dec.decode_autoregressive(params, np.zeros((9, 4), dtype=np.float32))
    with pytest.raises(ShapeError):
        dec.decode_teacher_forced(params, np.zeros((9, 4)), np.zeros((9, 6)))
    with pytest.raises(ShapeError):
        dec.decode_teacher_forced(params, np.zeros((3, 4)), np.zeros((4, 6)))


# -- hand-evaluated tiny transformer ----------------------------------------


def test_tiny_transformer_hand_oracle():
    # d_model=2, h=1, L=1, T=2.  Weights chosen so every stage is a short
    # pencil computation: embeddings and audio projection are zero, so the
    # tokens are exactly the sinusoid positions (sin t, cos t); q/k maps are
    # zero, so attention weights are uniform over allowed entries; v and o
    # maps are identity, so attention averages its inputs; the feed-forward
    # is zero; the head reads out the first two channels after final LN.
    dec = PoseDecoder(feat_dim=3, d_model=2, n_layers=1, n_heads=1, d_ff=2, max_frames=4)
    params = dec.init_params(seed=0)
    eye2 = np.eye(2, dtype=np.float32)
    params[f"{P}.embed.w"] = np.zeros((6, 2), dtype=np.float32)
    params[f"{P}.start"] = np.zeros(2, dtype=np.float32)
    params[f"{P}.audio.w"] = np.zeros((3, 2), dtype=np.float32)
    b = f"{P}.block0"
    for attn in ("self_attn", "cross_attn"):
        params[f"{b}.{attn}.wq"] = np.zeros((2, 2), dtype=np.float32)
        params[f"{b}.{attn}.wk"] = np.zeros((2, 2), dtype=np.float32)
        params[f"{b}.{attn}.wv"] = eye2.copy()
        params[f"{b}.{attn}.wo"] = eye2.copy()
    params[f"{b}.ff1.w"] = np.zeros((2, 2), dtype=np.float32)
    params[f"{b}.ff2.w"] = np.zeros((2, 2), dtype=np.float32)
    head = np.zeros((2, 6), dtype=np.float32)
    head[0, 0] = 1.0
    head[1, 1] = 1.0
    params[f"{P}.head.w"] = head

    audio = np.ones((2, 3), dtype=np.float32)
    gt = np.full((2, 6), 0.7, dtype=np.float64)  # embeds to zero anyway
    pred = dec.decode_teacher_forced(params, audio, gt)

    def ln(v, eps=1e-5):
        m = (v[0] + v[1]) / 2.0
        var = ((v[0] - m) ** 2 + (v[1] - m) ** 2) / 2.0
        return (v - m) / np.sqrt(var + eps)

    s1, c1 = np.sin(1.0), np.cos(1.0)
    x = np.array([[0.0, 1.0], [s1, c1]])  # tokens = positions
    mem = x.copy()  # memory = positions too
    a0, a1 = ln(x[0]), ln(x[1])
    x1 = np.array([x[0] + a0, x[1] + (a0 + a1) / 2.0])  # uniform causal self-attn
    ca = (mem[0] + mem[1]) / 2.0  # uniform cross-attn, same for both rows
    x2 = x1 + ca
    expected = np.stack([ln(x2[0]), ln(x2[1])])
    assert np.allclose(pred[:, :2], expected, atol=1e-5)
    assert np.allclose(pred[:, 2:], 0.0)


# -- gradchecks -------------------------------------------------------------


def test_gradcheck_decoder_block():
    block = audio2pose._DecoderBlock("blk", d_model=4, n_heads=2, d_ff=6)
    rng = np.random.default_rng(0)
    params = {}
    block.init_params(rng, params)
    params = {k: v.astype(np.float64) for k, v in params.items()}
    x = rng.normal(size=(3, 4))
    mem = rng.normal(size=(5, 4))
    target = rng.normal(size=(3, 4))
    mask = causal_mask(3)

    def fn(p):
        y, cache = block.fwd(p, x, mem, mask)
        loss = nn.mse_loss(y, target)
        g = {}
        block.bwd(g, cache, nn.mse_loss_grad(y, target))
        return loss, g

    assert nn.gradcheck(fn, params, h=1e-6) < 1e-4


def test_gradcheck_full_decoder():
    dec, params = init_pose_decoder(3, d_model=4, n_layers=1, n_heads=2, d_ff=6,
                                    max_frames=8, seed=1)
    rng = np.random.default_rng(2)
    params[f"{P}.head.w"] = rng.normal(0, 0.3, size=(4, 6)).astype(np.float32)
    params[f"{P}.head.b"] = rng.normal(0, 0.1, size=6).astype(np.float32)
    p64 = {k: v.astype(np.float64) for k, v in params.items()}
    feats = rng.normal(size=(3, 3))
    gt = rng.normal(0, 0.5, size=(3, 6))

    def fn(p):
        return dec.loss_and_grads(p, feats, gt)

    assert nn.gradcheck(fn, p64, h=1e-6) < 1e-4


# -- training ---------------------------------------------------------------


def make_pose_pairs(n_pairs, t_len, feat_dim, seed):
    """Sinusoidal yaw/pitch plus a fixed depth, loosely tied to the audio."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        x = rng.normal(size=(t_len, feat_dim)).astype(np.float32)
        t = np.arange(t_len)
        poses = np.zeros((t_len, 6))
        poses[:, 0] = 0.1 * np.sin(2 * np.pi * t / t_len + i)
        poses[:, 1] = 0.15 * np.cos(2 * np.pi * t / t_len)
        poses[:, 5] = 2.5
        pairs.append((feats_seq(x), PoseSequence(poses=poses, fps=25.0)))
    return pairs


def test_train_rejects_empty_and_mismatched():
    with pytest.raises(DatasetError):
        train_audio2pose([])
    bad = [(feats_seq(np.zeros((3, 4))), PoseSequence(poses=np.zeros((2, 6)), fps=25.0))]
    with pytest.raises(DatasetError, match="pair 0"):
        train_audio2pose(bad)


def test_train_zero_targets_stay_at_zero():
    pairs = []
    rng = np.random.default_rng(0)
    for _ in range(2):
        x = rng.normal(size=(5, 4)).astype(np.float32)
        pairs.append((feats_seq(x), PoseSequence(poses=np.zeros((5, 6)), fps=25.0)))
    _, params, history = train_audio2pose(pairs, steps=10, eval_every=5, seed=0)
    assert history["val"][0][1] == 0.0
    assert all(loss == 0.0 for _, loss in history["train"])
    assert not params[f"{P}.head.w"].any()


def test_train_seed_determinism():
    pairs = make_pose_pairs(3, 8, 4, seed=5)
    _, _, h1 = train_audio2pose(pairs, steps=20, eval_every=10, seed=3)
    _, _, h2 = train_audio2pose(pairs, steps=20, eval_every=10, seed=3)
    assert h1 == h2


def test_train_reduces_validation_loss():
    pairs = make_pose_pairs(3, 16, 6, seed=2)
    _, _, history = train_audio2pose(pairs, steps=150, eval_every=50, seed=0)
    first = history["val"][0][1]
    last = history["val"][-1][1]
    assert last < 0.6 * first


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_named_step():
    pairs = make_pose_pairs(2, 6, 4, seed=1)
    with pytest.raises(DivergenceError, match="step"):
        train_audio2pose(pairs, lr=1e18, steps=60, seed=0)
