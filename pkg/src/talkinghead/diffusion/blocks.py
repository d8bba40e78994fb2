"""Building blocks for the latent video denoiser.

Everything here follows the forward/backward pair convention from the nn
module: fwd returns (out, cache), bwd consumes (cache, dout), parameter
gradients accumulate into a shared dict.  Spatial self-attention can
concatenate reference tokens along the key/value axis; temporal attention
mixes the frame axis and is an exact identity while its output projection
stays at zero.
"""

from __future__ import annotations

import numpy as np

from .. import nn
from ..errors import ShapeError


class TimeEmbedding:
    """Sinusoidal timestep features through a two-layer MLP."""

    def __init__(self, prefix: str, emb_dim: int = 128, sin_dim: int = 64):
        self.prefix = prefix
        self.emb_dim = emb_dim
        self.sin_dim = sin_dim

    def init_params(self, rng, params):
        params[f"{self.prefix}.fc1.w"] = nn.uniform_init(rng, (self.sin_dim, self.emb_dim), self.sin_dim)
        params[f"{self.prefix}.fc1.b"] = np.zeros(self.emb_dim, dtype=np.float32)
        params[f"{self.prefix}.fc2.w"] = nn.uniform_init(rng, (self.emb_dim, self.emb_dim), self.emb_dim)
        params[f"{self.prefix}.fc2.b"] = np.zeros(self.emb_dim, dtype=np.float32)

    def fwd(self, p, ts: np.ndarray):
        ts = np.atleast_1d(np.asarray(ts, dtype=np.int64))
        dtype = p[f"{self.prefix}.fc1.w"].dtype
        sin = nn.sinusoid_table(int(ts.max()) + 1, self.sin_dim)[ts].astype(dtype)
        h, c1 = nn.dense_forward(sin, p[f"{self.prefix}.fc1.w"], p[f"{self.prefix}.fc1.b"])
        r, cr = nn.relu_forward(h)
        e, c2 = nn.dense_forward(r, p[f"{self.prefix}.fc2.w"], p[f"{self.prefix}.fc2.b"])
        return e, (c1, cr, c2)

    def bwd(self, g, cache, demb):
        c1, cr, c2 = cache
        dr, dw2, db2 = nn.dense_backward(c2, demb)
        nn.accumulate_grad(g, f"{self.prefix}.fc2.w", dw2)
        nn.accumulate_grad(g, f"{self.prefix}.fc2.b", db2)
        dh = nn.relu_backward(cr, dr)
        _, dw1, db1 = nn.dense_backward(c1, dh)
        nn.accumulate_grad(g, f"{self.prefix}.fc1.w", dw1)
        nn.accumulate_grad(g, f"{self.prefix}.fc1.b", db1)


class ResBlock:
    """GN-relu-conv twice with a timestep shift after the first conv.

    emb_dim=None drops the time pathway (ReferenceNet flavor).  A 1x1
    shortcut reconciles differing channel counts.
    """

    def __init__(self, prefix: str, c_in: int, c_out: int, emb_dim: int | None = None):
        self.prefix = prefix
        self.c_in = c_in
        self.c_out = c_out
        self.emb_dim = emb_dim
        self.gn1 = nn.GroupNorm(f"{prefix}.gn1", c_in)
        self.conv1 = nn.Conv2d(f"{prefix}.conv1", c_in, c_out)
        self.gn2 = nn.GroupNorm(f"{prefix}.gn2", c_out)
        self.conv2 = nn.Conv2d(f"{prefix}.conv2", c_out, c_out)
        self.shortcut = nn.Conv2d(f"{prefix}.shortcut", c_in, c_out, kernel=1, pad=0) if c_in != c_out else None

    def init_params(self, rng, params):
        self.gn1.init_params(rng, params)
        self.conv1.init_params(rng, params)
        if self.emb_dim is not None:
            params[f"{self.prefix}.emb.w"] = nn.uniform_init(rng, (self.emb_dim, self.c_out), self.emb_dim)
            params[f"{self.prefix}.emb.b"] = np.zeros(self.c_out, dtype=np.float32)
        self.gn2.init_params(rng, params)
        self.conv2.init_params(rng, params)
        if self.shortcut is not None:
            self.shortcut.init_params(rng, params)

    def fwd(self, p, x, emb=None):
        a1, cg1 = self.gn1.fwd(p, x)
        r1, cr1 = nn.relu_forward(a1)
        h, cc1 = self.conv1.fwd(p, r1)
        ce = None
        if self.emb_dim is not None:
            if emb is None:
                raise ShapeError(f"{self.prefix}: time embedding required")
            shift, ce = nn.dense_forward(emb, p[f"{self.prefix}.emb.w"], p[f"{self.prefix}.emb.b"])
            h = h + shift[:, :, None, None]
        a2, cg2 = self.gn2.fwd(p, h)
        r2, cr2 = nn.relu_forward(a2)
        h2, cc2 = self.conv2.fwd(p, r2)
        if self.shortcut is not None:
            sc, csc = self.shortcut.fwd(p, x)
        else:
            sc, csc = x, None
        return h2 + sc, (cg1, cr1, cc1, ce, cg2, cr2, cc2, csc)

    def bwd(self, g, p, cache, dy):
        """Returns (dx, demb) with demb=None when there is no time path."""
        cg1, cr1, cc1, ce, cg2, cr2, cc2, csc = cache
        dr2 = self.conv2.bwd(g, p, cc2, dy)
        da2 = nn.relu_backward(cr2, dr2)
        dh = self.gn2.bwd(g, cg2, da2)
        demb = None
        if ce is not None:
            dshift = dh.sum(axis=(2, 3))
            demb, dwe, dbe = nn.dense_backward(ce, dshift)
            nn.accumulate_grad(g, f"{self.prefix}.emb.w", dwe)
            nn.accumulate_grad(g, f"{self.prefix}.emb.b", dbe)
        dr1 = self.conv1.bwd(g, p, cc1, dh)
        da1 = nn.relu_backward(cr1, dr1)
        dx = self.gn1.bwd(g, cg1, da1)
        if self.shortcut is not None:
            dx = dx + self.shortcut.bwd(g, p, csc, dy)
        else:
            dx = dx + dy
        return dx, demb


def _to_tokens(x):
    n, c, h, w = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1).reshape(n, h * w, c)), (n, c, h, w)


def _from_tokens(tok, shape):
    n, c, h, w = shape
    return np.ascontiguousarray(tok.reshape(n, h, w, c).transpose(0, 3, 1, 2))


class SpatialSelfAttention:
    """Per-token LayerNorm + multi-head attention over the H*W axis.

    ref, when given, is a feature map whose tokens are layer-normed with
    the same parameters and concatenated to keys/values; it may be one
    (C, Hr, Wr) map shared by the whole batch or a per-element
    (N, C, Hr, Wr) stack.  Passing ref=None bypasses concatenation
    entirely (the reference-free switch); zero-filled reference tokens
    would NOT be equivalent.
    """

    def __init__(self, prefix: str, channels: int, n_heads: int = 4):
        self.prefix = prefix
        self.channels = channels
        self.ln = nn.LayerNorm(f"{prefix}.ln", channels)
        self.mha = nn.MultiHeadAttention(f"{prefix}.mha", channels, n_heads)

    def init_params(self, rng, params):
        self.ln.init_params(rng, params)
        self.mha.init_params(rng, params)

    def fwd(self, p, x, ref=None):
        tok, shape = _to_tokens(x)
        n = shape[0]
        tq, cln = self.ln.fwd(p, tok)
        cref = None
        if ref is None:
            kv = tq
        else:
            shared = ref.ndim == 3
            rtok = (ref.reshape(ref.shape[0], -1).T if shared
                    else _to_tokens(ref)[0])
            rln, cln_r = self.ln.fwd(p, rtok)
            rkv = np.broadcast_to(rln, (n,) + rln.shape) if shared else rln
            kv = np.concatenate([tq, np.ascontiguousarray(rkv)], axis=1)
            cref = (shared, ref.shape, cln_r)
        out, cmha = self.mha.fwd(p, tq, kv, mask=None)
        y = tok + out
        return _from_tokens(y, shape), (cln, cmha, cref, shape)

    def bwd(self, g, cache, dy):
        """Returns (dx, dref); dref matches the shape ref was given in."""
        cln, cmha, cref, shape = cache
        n, c, h, w = shape
        dtok, _ = _to_tokens(dy)
        dtq, dkv = self.mha.bwd(g, cmha, dtok)
        dref = None
        if cref is None:
            dtq = dtq + dkv
        else:
            shared, ref_shape, cln_r = cref
            t = h * w
            dtq = dtq + dkv[:, :t]
            drkv = dkv[:, t:]
            if shared:
                drln = self.ln.bwd(g, cln_r, drkv.sum(axis=0))
                dref = np.ascontiguousarray(drln.T.reshape(ref_shape))
            else:
                drln = self.ln.bwd(g, cln_r, drkv)
                dref = _from_tokens(drln, ref_shape)
        dtok2 = dtok + self.ln.bwd(g, cln, dtq)
        return _from_tokens(dtok2, shape), dref


class TemporalAttention:
    """Self-attention along the frame axis at every spatial position.

    Output projection initialized to zero, so the residual makes this an
    exact identity at init (bitwise), the safe-start contract for the
    motion module.
    """

    def __init__(self, prefix: str, channels: int, n_heads: int = 4, max_frames: int = 64):
        self.prefix = prefix
        self.channels = channels
        self.max_frames = max_frames
        self.ln = nn.LayerNorm(f"{prefix}.ln", channels)
        self.mha = nn.MultiHeadAttention(f"{prefix}.mha", channels, n_heads, zero_out=True)
        self.pos = nn.sinusoid_table(max_frames, channels).astype(np.float32)

    def init_params(self, rng, params):
        self.ln.init_params(rng, params)
        self.mha.init_params(rng, params)

    def fwd(self, p, x):
        f, c, h, w = x.shape
        if f > self.max_frames:
            raise ShapeError(f"{self.prefix}: clip of {f} frames exceeds max {self.max_frames}")
        tok = np.ascontiguousarray(x.transpose(2, 3, 0, 1).reshape(h * w, f, c))
        tl, cln = self.ln.fwd(p, tok)
        tin = tl + self.pos[:f].astype(tl.dtype)
        out, cmha = self.mha.fwd(p, tin, tin, mask=None)
        y = tok + out
        y = np.ascontiguousarray(y.reshape(h, w, f, c).transpose(2, 3, 0, 1))
        return y, (cln, cmha, x.shape)

    def bwd(self, g, cache, dy):
        cln, cmha, shape = cache
        f, c, h, w = shape
        dtok = np.ascontiguousarray(dy.transpose(2, 3, 0, 1).reshape(h * w, f, c))
        dq, dkv = self.mha.bwd(g, cmha, dtok)
        dtok2 = dtok + self.ln.bwd(g, cln, dq + dkv)
        return np.ascontiguousarray(dtok2.reshape(h, w, f, c).transpose(2, 3, 0, 1))


class Upsample:
    """Nearest-neighbor 2x then a 3x3 conv (with channel change)."""

    def __init__(self, prefix: str, c_in: int, c_out: int):
        self.prefix = prefix
        self.conv = nn.Conv2d(f"{prefix}.conv", c_in, c_out)

    def init_params(self, rng, params):
        self.conv.init_params(rng, params)

    def fwd(self, p, x):
        u, su = nn.upsample2x_forward(x)
        y, cc = self.conv.fwd(p, u)
        return y, (su, cc)

    def bwd(self, g, p, cache, dy):
        su, cc = cache
        du = self.conv.bwd(g, p, cc, dy)
        return nn.upsample2x_backward(su, du)
