"""Audio features to head-pose sequences via a causal decoder.

A small pre-LN transformer decoder: masked self-attention over pose
tokens, cross-attention into the (projected) audio feature sequence, and
a zero-initialized 6-dim output head so the untrained model emits the
neutral pose.  Decoding always runs the full fixed-shape token matrix so
autoregressive outputs replay bit-identically under teacher forcing.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .audio import AudioFeatureSequence
from .errors import DatasetError, DivergenceError, ShapeError
from .geometry import PoseSequence

PREFIX = "audio2pose"


def causal_mask(t: int) -> np.ndarray:
    """(t, t) boolean; entry (i, j) allowed iff j <= i."""
    if t < 1:
        raise ShapeError(f"mask length must be >= 1, got {t}")
    return np.tril(np.ones((t, t), dtype=bool))


class _DecoderBlock:
    def __init__(self, prefix: str, d_model: int, n_heads: int, d_ff: int):
        self.prefix = prefix
        self.ln1 = nn.LayerNorm(f"{prefix}.ln1", d_model)
        self.self_attn = nn.MultiHeadAttention(f"{prefix}.self_attn", d_model, n_heads)
        self.ln2 = nn.LayerNorm(f"{prefix}.ln2", d_model)
        self.cross_attn = nn.MultiHeadAttention(f"{prefix}.cross_attn", d_model, n_heads)
        self.ln3 = nn.LayerNorm(f"{prefix}.ln3", d_model)
        self.d_ff = d_ff
        self.d_model = d_model

    def init_params(self, rng, params):
        self.ln1.init_params(rng, params)
        self.self_attn.init_params(rng, params)
        self.ln2.init_params(rng, params)
        self.cross_attn.init_params(rng, params)
        self.ln3.init_params(rng, params)
        params[f"{self.prefix}.ff1.w"] = nn.uniform_init(rng, (self.d_model, self.d_ff), self.d_model)
        params[f"{self.prefix}.ff1.b"] = np.zeros(self.d_ff, dtype=np.float32)
        params[f"{self.prefix}.ff2.w"] = nn.uniform_init(rng, (self.d_ff, self.d_model), self.d_ff)
        params[f"{self.prefix}.ff2.b"] = np.zeros(self.d_model, dtype=np.float32)

    def fwd(self, p, x, mem, mask):
        a, c_ln1 = self.ln1.fwd(p, x)
        sa, c_sa = self.self_attn.fwd(p, a, a, mask)
        x1 = x + sa
        c, c_ln2 = self.ln2.fwd(p, x1)
        ca, c_ca = self.cross_attn.fwd(p, c, mem)
        x2 = x1 + ca
        f, c_ln3 = self.ln3.fwd(p, x2)
        h_pre, c_f1 = nn.dense_forward(f, p[f"{self.prefix}.ff1.w"], p[f"{self.prefix}.ff1.b"])
        h, c_relu = nn.relu_forward(h_pre)
        ff, c_f2 = nn.dense_forward(h, p[f"{self.prefix}.ff2.w"], p[f"{self.prefix}.ff2.b"])
        return x2 + ff, (c_ln1, c_sa, c_ln2, c_ca, c_ln3, c_f1, c_relu, c_f2)

    def bwd(self, g, cache, dy):
        """Returns (dx, dmem)."""
        c_ln1, c_sa, c_ln2, c_ca, c_ln3, c_f1, c_relu, c_f2 = cache
        dh, dw2, db2 = nn.dense_backward(c_f2, dy)
        nn.accumulate_grad(g, f"{self.prefix}.ff2.w", dw2)
        nn.accumulate_grad(g, f"{self.prefix}.ff2.b", db2)
        dh_pre = nn.relu_backward(c_relu, dh)
        df, dw1, db1 = nn.dense_backward(c_f1, dh_pre)
        nn.accumulate_grad(g, f"{self.prefix}.ff1.w", dw1)
        nn.accumulate_grad(g, f"{self.prefix}.ff1.b", db1)
        dx2 = dy + self.ln3.bwd(g, c_ln3, df)
        dc, dmem = self.cross_attn.bwd(g, c_ca, dx2)
        dx1 = dx2 + self.ln2.bwd(g, c_ln2, dc)
        dq, dkv = self.self_attn.bwd(g, c_sa, dx1)
        dx = dx1 + self.ln1.bwd(g, c_ln1, dq + dkv)
        return dx, dmem


class PoseDecoder:
    def __init__(self, feat_dim: int, d_model: int = 64, n_layers: int = 2,
                 n_heads: int = 4, d_ff: int = 128, max_frames: int = 512):
        if d_model % n_heads:
            raise ShapeError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.feat_dim = feat_dim
        self.d_model = d_model
        self.n_layers = n_layers
        self.max_frames = max_frames
        self.blocks = [
            _DecoderBlock(f"{PREFIX}.block{i}", d_model, n_heads, d_ff) for i in range(n_layers)
        ]
        self.ln_f = nn.LayerNorm(f"{PREFIX}.ln_f", d_model)
        self.pos = nn.sinusoid_table(max_frames, d_model).astype(np.float32)

    def init_params(self, seed: int = 0) -> dict:
        rng = np.random.default_rng(seed)
        params = {}
        params[f"{PREFIX}.embed.w"] = nn.uniform_init(rng, (6, self.d_model), 6)
        params[f"{PREFIX}.embed.b"] = np.zeros(self.d_model, dtype=np.float32)
        params[f"{PREFIX}.start"] = nn.uniform_init(rng, (self.d_model,), self.d_model)
        params[f"{PREFIX}.audio.w"] = nn.uniform_init(rng, (self.feat_dim, self.d_model), self.feat_dim)
        params[f"{PREFIX}.audio.b"] = np.zeros(self.d_model, dtype=np.float32)
        for block in self.blocks:
            block.init_params(rng, params)
        self.ln_f.init_params(rng, params)
        params[f"{PREFIX}.head.w"] = np.zeros((self.d_model, 6), dtype=np.float32)
        params[f"{PREFIX}.head.b"] = np.zeros(6, dtype=np.float32)
        return params

    # -- forward/backward over a full token matrix ------------------------

    def _check_len(self, t):
        if t > self.max_frames:
            raise ShapeError(f"sequence length {t} exceeds max_frames {self.max_frames}")
        if t < 1:
            raise ShapeError("empty sequence")

    def _memory(self, p, feats):
        mem_lin, cache = nn.dense_forward(feats, p[f"{PREFIX}.audio.w"], p[f"{PREFIX}.audio.b"])
        mem = mem_lin + self.pos[:feats.shape[0]].astype(mem_lin.dtype)
        return mem, cache

    def _forward_tokens(self, p, x0, mem, mask):
        x = x0 + self.pos[:x0.shape[0]].astype(x0.dtype)
        caches = []
        for block in self.blocks:
            x, c = block.fwd(p, x, mem, mask)
            caches.append(c)
        xf, c_lnf = self.ln_f.fwd(p, x)
        y, c_head = nn.dense_forward(xf, p[f"{PREFIX}.head.w"], p[f"{PREFIX}.head.b"])
        return y, (caches, c_lnf, c_head)

    def _backward_tokens(self, g, cache, dy):
        caches, c_lnf, c_head = cache
        dxf, dwh, dbh = nn.dense_backward(c_head, dy)
        nn.accumulate_grad(g, f"{PREFIX}.head.w", dwh)
        nn.accumulate_grad(g, f"{PREFIX}.head.b", dbh)
        dx = self.ln_f.bwd(g, c_lnf, dxf)
        dmem_total = None
        for block, c in zip(reversed(self.blocks), reversed(caches)):
            dx, dmem = block.bwd(g, c, dx)
            dmem_total = dmem if dmem_total is None else dmem_total + dmem
        return dx, dmem_total

    def _input_tokens(self, p, prev_poses):
        """Token 0 is the learned start vector; token t>0 embeds prev_poses[t-1]."""
        t = prev_poses.shape[0] + 1
        dtype = p[f"{PREFIX}.embed.w"].dtype
        x0 = np.empty((t, self.d_model), dtype=dtype)
        x0[0] = p[f"{PREFIX}.start"]
        if t > 1:
            emb, _ = nn.dense_forward(prev_poses.astype(dtype), p[f"{PREFIX}.embed.w"], p[f"{PREFIX}.embed.b"])
            x0[1:] = emb
        return x0

    # -- public decoding --------------------------------------------------

    def decode_teacher_forced(self, params: dict, audio, gt) -> np.ndarray:
        """Predictions with ground-truth previous tokens, (T, 6) float32."""
        feats = audio.frames if isinstance(audio, AudioFeatureSequence) else np.asarray(audio)
        gt_arr = gt.poses if isinstance(gt, PoseSequence) else np.asarray(gt)
        if feats.shape[0] != gt_arr.shape[0]:
            raise ShapeError(f"audio length {feats.shape[0]} vs pose length {gt_arr.shape[0]}")
        self._check_len(feats.shape[0])
        feats = feats.astype(np.float32)
        mem, _ = self._memory(params, feats)
        x0 = self._input_tokens(params, gt_arr[:-1].astype(np.float32))
        y, _ = self._forward_tokens(params, x0, mem, causal_mask(feats.shape[0]))
        return y

    def decode_autoregressive(self, params: dict, audio, seed_pose=None) -> PoseSequence:
        """Feed own outputs back as next tokens; deterministic, length T.

        The first input token defaults to the learned start vector, exactly
        as in teacher forcing, so replaying the output through
        decode_teacher_forced is bit-identical.  A non-None seed_pose
        replaces the start token with its embedding (motion-editing hook).
        """
        feats = audio.frames if isinstance(audio, AudioFeatureSequence) else np.asarray(audio)
        fps = audio.fps if isinstance(audio, AudioFeatureSequence) else 25.0
        t_len = feats.shape[0]
        self._check_len(t_len)
        feats = feats.astype(np.float32)
        mem, _ = self._memory(params, feats)
        mask = causal_mask(t_len)
        x0 = np.zeros((t_len, self.d_model), dtype=np.float32)
        if seed_pose is None:
            x0[0] = params[f"{PREFIX}.start"]
        else:
            seed_pose = np.asarray(seed_pose, dtype=np.float32).reshape(6)
            emb, _ = nn.dense_forward(seed_pose[None], params[f"{PREFIX}.embed.w"], params[f"{PREFIX}.embed.b"])
            x0[0] = emb[0]
        out = np.zeros((t_len, 6), dtype=np.float32)
        for t in range(t_len):
            # full fixed-shape pass each step: future rows hold placeholder
            # zeros that the causal mask keeps out of rows <= t, so row t
            # here is bitwise the row t of a teacher-forced replay
            y, _ = self._forward_tokens(params, x0, mem, mask)
            out[t] = y[t]
            if t + 1 < t_len:
                emb, _ = nn.dense_forward(out[t][None], params[f"{PREFIX}.embed.w"], params[f"{PREFIX}.embed.b"])
                x0[t + 1] = emb[0]
        return PoseSequence(poses=out.astype(np.float64), fps=fps)

    # -- training ---------------------------------------------------------

    def loss_and_grads(self, params: dict, feats: np.ndarray, gt: np.ndarray):
        """Teacher-forced L1 loss and parameter gradients."""
        t_len = feats.shape[0]
        self._check_len(t_len)
        dtype = params[f"{PREFIX}.embed.w"].dtype
        feats = feats.astype(dtype)
        mem_lin, c_mem = nn.dense_forward(feats, params[f"{PREFIX}.audio.w"], params[f"{PREFIX}.audio.b"])
        mem = mem_lin + self.pos[:t_len].astype(dtype)
        gt = gt.astype(dtype)
        prev = gt[:-1]
        x0 = np.empty((t_len, self.d_model), dtype=dtype)
        x0[0] = params[f"{PREFIX}.start"]
        c_emb = None
        if t_len > 1:
            emb, c_emb = nn.dense_forward(prev, params[f"{PREFIX}.embed.w"], params[f"{PREFIX}.embed.b"])
            x0[1:] = emb
        y, cache = self._forward_tokens(params, x0, mem, causal_mask(t_len))
        loss = nn.l1_loss(y, gt)
        g = {}
        dx0, dmem = self._backward_tokens(g, cache, nn.l1_loss_grad(y, gt))
        nn.accumulate_grad(g, f"{PREFIX}.start", dx0[0])
        if c_emb is not None:
            _, dwe, dbe = nn.dense_backward(c_emb, dx0[1:])
            nn.accumulate_grad(g, f"{PREFIX}.embed.w", dwe)
            nn.accumulate_grad(g, f"{PREFIX}.embed.b", dbe)
        else:
            nn.accumulate_grad(g, f"{PREFIX}.embed.w", np.zeros_like(params[f"{PREFIX}.embed.w"]))
            nn.accumulate_grad(g, f"{PREFIX}.embed.b", np.zeros_like(params[f"{PREFIX}.embed.b"]))
        _, dwa, dba = nn.dense_backward(c_mem, dmem)
        nn.accumulate_grad(g, f"{PREFIX}.audio.w", dwa)
        nn.accumulate_grad(g, f"{PREFIX}.audio.b", dba)
        return loss, g


def init_pose_decoder(feat_dim: int, d_model: int = 64, n_layers: int = 2, n_heads: int = 4,
                      d_ff: int = 128, max_frames: int = 512, seed: int = 0):
    """Returns (decoder, params) with a zero output head."""
    decoder = PoseDecoder(feat_dim, d_model, n_layers, n_heads, d_ff, max_frames)
    return decoder, decoder.init_params(seed)


def train_audio2pose(pairs, *, d_model: int = 64, n_layers: int = 2, n_heads: int = 4,
                     d_ff: int = 128, max_frames: int = 512, lr: float = 5e-3,
                     steps: int = 800, batch: int = 2, eval_every: int = 50, seed: int = 0):
    """Adam on teacher-forced L1 loss over pose sequences; last pair held out.

    pairs: list of (AudioFeatureSequence, PoseSequence).
    Returns (decoder, params, history).
    """
    if not pairs:
        raise DatasetError("empty audio2pose dataset")
    for i, (feats, poses) in enumerate(pairs):
        if len(feats) != len(poses):
            raise DatasetError(f"pair {i}: {len(feats)} feature frames vs {len(poses)} poses")
    feat_dim = pairs[0][0].frames.shape[1]
    decoder = PoseDecoder(feat_dim, d_model, n_layers, n_heads, d_ff, max_frames)
    params = decoder.init_params(seed)
    state = nn.init_adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    train_pairs = pairs[:-1] if len(pairs) > 1 else pairs
    val_pairs = pairs[-1:]
    train_data = [(p[0].frames.astype(np.float32), p[1].poses.astype(np.float32)) for p in train_pairs]
    val_data = [(p[0].frames.astype(np.float32), p[1].poses.astype(np.float32)) for p in val_pairs]
    history = {"train": [], "val": []}

    def val_loss():
        total = 0.0
        for feats, gt in val_data:
            pred = decoder.decode_teacher_forced(params, feats, gt)
            total += nn.l1_loss(pred, gt)
        return total / len(val_data)

    history["val"].append((0, val_loss()))
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(train_data), size=min(batch, len(train_data)))
        grads = {}
        loss_total = 0.0
        for i in idx:
            feats, gt = train_data[i]
            loss, g = decoder.loss_and_grads(params, feats, gt)
            loss_total += loss
            for k, v in g.items():
                nn.accumulate_grad(grads, k, v)
        loss_mean = loss_total / len(idx)
        if not np.isfinite(loss_mean):
            raise DivergenceError(f"non-finite training loss at step {step}")
        grads = {k: v / len(idx) for k, v in grads.items()}
        nn.adam_step(params, grads, state)
        history["train"].append((step, loss_mean))
        if step % eval_every == 0 or step == steps:
            history["val"].append((step, val_loss()))
    return decoder, params, history
