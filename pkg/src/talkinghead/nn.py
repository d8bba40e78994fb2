"""Differentiable building blocks on plain numpy arrays.

Every operation comes as a forward/backward pair: forward returns
(out, cache), backward consumes (cache, dout) and returns input gradients
while accumulating parameter gradients into a flat {name: array} dict.
Parameters live in one flat dict with dotted names ("audio2mesh.fc1.w") so
checkpoints and optimizers see a single namespace.

All code is dtype polymorphic: training runs float32, and gradient checks
rerun the same code paths with float64 parameters.  Scalar constants are
python floats so float32 arrays stay float32 under NEP 50 promotion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import DegenerateMaskError, DivergenceError, MissingGradError, ShapeError

# ---------------------------------------------------------------------------
# parameter helpers


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) draw."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def accumulate_grad(grads: dict, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


# ---------------------------------------------------------------------------
# dense / relu


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y = x @ w + b over the last axis.

    x: (..., D_in), w: (D_in, D_out), b: (D_out,).
    Returns (y, cache).
    """
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} != ({w.shape[1]},)")
    y = x @ w + b
    return y, (x, w)


def dense_backward(cache, dy: np.ndarray):
    """Returns (dx, dw, db)."""
    x, w = cache
    d_in, d_out = w.shape
    dx = dy @ w.T
    xf = x.reshape(-1, d_in)
    dyf = dy.reshape(-1, d_out)
    dw = xf.T @ dyf
    db = dyf.sum(axis=0)
    return dx, dw, db


def relu_forward(x: np.ndarray):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(cache, dy: np.ndarray):
    return dy * cache


# ---------------------------------------------------------------------------
# attention


def _attention_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray, mask=None):
    """Scaled dot-product attention over the last two axes.

    q: (..., Tq, d), k: (..., Tk, d), v: (..., Tk, dv).
    mask: bool (Tq, Tk) or broadcastable; True = allowed.  Scores are
    pre-scaled by 1/sqrt(d); the row max over allowed entries is subtracted
    before exp, and masked entries are exactly zero after the exp.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: {k.shape[-2]} keys vs {v.shape[-2]} values")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ np.swapaxes(k, -1, -2)) * scale  # (..., Tq, Tk)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.all(mask.any(axis=-1)):
            raise DegenerateMaskError("attention mask forbids every key for some query row")
        scores = np.where(mask, scores, -np.inf)
    row_max = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - row_max)  # masked entries: exp(-inf) == 0 exactly
    z = e.sum(axis=-1, keepdims=True)
    p = e / z
    out = p @ v
    return out, (q, k, v, p, scale)


def _attention_backward(cache, dout: np.ndarray):
    """Returns (dq, dk, dv)."""
    q, k, v, p, scale = cache
    dv = np.swapaxes(p, -1, -2) @ dout
    dp = dout @ np.swapaxes(v, -1, -2)
    # softmax jacobian: dS = P * (dP - sum(dP * P)); masked entries have P == 0
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    dq = (ds @ k) * scale
    dk = (np.swapaxes(ds, -1, -2) @ q) * scale
    return dq, dk, dv


def softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, mask=None) -> np.ndarray:
    """Single attention map for 2D inputs: q (Tq, d), k (Tk, d), v (Tk, dv)."""
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("softmax_attention expects 2D q/k/v")
    out, _ = _attention_forward(q, k, v, mask)
    return out


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    # (..., T, D) -> (..., h, T, D/h)
    *lead, t, d = x.shape
    y = x.reshape(*lead, t, n_heads, d // n_heads)
    return np.swapaxes(y, -3, -2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    # (..., h, T, dh) -> (..., T, h*dh)
    y = np.swapaxes(x, -3, -2)
    *lead, t, h, dh = y.shape
    return y.reshape(*lead, t, h * dh)


class MultiHeadAttention:
    """Q/K/V/output projections around scaled dot-product attention.

    Operates on (..., T, D) token stacks; leading axes are batch-like.
    Parameter names: {prefix}.wq/.bq/.wk/.bk/.wv/.bv/.wo/.bo.
    """

    def __init__(self, prefix: str, d_model: int, n_heads: int,
                 d_q: int | None = None, d_kv: int | None = None, zero_out: bool = False):
        if d_model % n_heads:
            raise ShapeError(f"{prefix}: d_model {d_model} not divisible by {n_heads} heads")
        self.prefix = prefix
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_q = d_model if d_q is None else d_q
        self.d_kv = d_model if d_kv is None else d_kv
        self.zero_out = zero_out

    def init_params(self, rng: np.random.Generator, params: dict) -> None:
        p = self.prefix
        d = self.d_model
        params[f"{p}.wq"] = uniform_init(rng, (self.d_q, d), self.d_q)
        params[f"{p}.bq"] = np.zeros(d, dtype=np.float32)
        params[f"{p}.wk"] = uniform_init(rng, (self.d_kv, d), self.d_kv)
        params[f"{p}.bk"] = np.zeros(d, dtype=np.float32)
        params[f"{p}.wv"] = uniform_init(rng, (self.d_kv, d), self.d_kv)
        params[f"{p}.bv"] = np.zeros(d, dtype=np.float32)
        if self.zero_out:
            params[f"{p}.wo"] = np.zeros((d, d), dtype=np.float32)
        else:
            params[f"{p}.wo"] = uniform_init(rng, (d, d), d)
        params[f"{p}.bo"] = np.zeros(d, dtype=np.float32)

    def fwd(self, p: dict, xq: np.ndarray, xkv: np.ndarray, mask=None):
        pre = self.prefix
        q, cq = dense_forward(xq, p[f"{pre}.wq"], p[f"{pre}.bq"])
        k, ck = dense_forward(xkv, p[f"{pre}.wk"], p[f"{pre}.bk"])
        v, cv = dense_forward(xkv, p[f"{pre}.wv"], p[f"{pre}.bv"])
        qh = _split_heads(q, self.n_heads)
        kh = _split_heads(k, self.n_heads)
        vh = _split_heads(v, self.n_heads)
        oh, ca = _attention_forward(qh, kh, vh, mask)
        o = _merge_heads(oh)
        y, co = dense_forward(o, p[f"{pre}.wo"], p[f"{pre}.bo"])
        return y, (cq, ck, cv, ca, co)

    def bwd(self, g: dict, cache, dy: np.ndarray):
        """Returns (dxq, dxkv)."""
        pre = self.prefix
        cq, ck, cv, ca, co = cache
        do, dwo, dbo = dense_backward(co, dy)
        accumulate_grad(g, f"{pre}.wo", dwo)
        accumulate_grad(g, f"{pre}.bo", dbo)
        doh = _split_heads(do, self.n_heads)
        dqh, dkh, dvh = _attention_backward(ca, doh)
        dq = _merge_heads(dqh)
        dk = _merge_heads(dkh)
        dv = _merge_heads(dvh)
        dxq, dwq, dbq = dense_backward(cq, dq)
        dxk, dwk, dbk = dense_backward(ck, dk)
        dxv, dwv, dbv = dense_backward(cv, dv)
        accumulate_grad(g, f"{pre}.wq", dwq)
        accumulate_grad(g, f"{pre}.bq", dbq)
        accumulate_grad(g, f"{pre}.wk", dwk)
        accumulate_grad(g, f"{pre}.bk", dbk)
        accumulate_grad(g, f"{pre}.wv", dwv)
        accumulate_grad(g, f"{pre}.bv", dbv)
        return dxq, dxk + dxv


# ---------------------------------------------------------------------------
# normalization


def _rownorm_forward(x2: np.ndarray, eps: float):
    # x2: (R, M); normalize each row to zero mean / unit variance
    mu = x2.mean(axis=1, keepdims=True)
    xc = x2 - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    return xh, inv


def _rownorm_backward(dxh: np.ndarray, xh: np.ndarray, inv: np.ndarray):
    t1 = dxh.mean(axis=1, keepdims=True)
    t2 = (dxh * xh).mean(axis=1, keepdims=True)
    return inv * (dxh - t1 - xh * t2)


class LayerNorm:
    """Per-token normalization over the last axis with affine params."""

    def __init__(self, prefix: str, dim: int, eps: float = 1e-5):
        self.prefix = prefix
        self.dim = dim
        self.eps = eps

    def init_params(self, rng: np.random.Generator, params: dict) -> None:
        params[f"{self.prefix}.g"] = np.ones(self.dim, dtype=np.float32)
        params[f"{self.prefix}.b"] = np.zeros(self.dim, dtype=np.float32)

    def fwd(self, p: dict, x: np.ndarray):
        if x.shape[-1] != self.dim:
            raise ShapeError(f"{self.prefix}: last axis {x.shape[-1]} != {self.dim}")
        shape = x.shape
        x2 = x.reshape(-1, self.dim)
        xh, inv = _rownorm_forward(x2, self.eps)
        gain = p[f"{self.prefix}.g"]
        y = (xh * gain + p[f"{self.prefix}.b"]).reshape(shape)
        return y, (xh, inv, gain, shape)

    def bwd(self, g: dict, cache, dy: np.ndarray):
        xh, inv, gain, shape = cache
        dy2 = dy.reshape(-1, self.dim)
        accumulate_grad(g, f"{self.prefix}.g", (dy2 * xh).sum(axis=0))
        accumulate_grad(g, f"{self.prefix}.b", dy2.sum(axis=0))
        dxh = dy2 * gain
        dx = _rownorm_backward(dxh, xh, inv)
        return dx.reshape(shape)


class GroupNorm:
    """Channel-group normalization for (N, C, H, W) maps with per-channel affine."""

    def __init__(self, prefix: str, channels: int, groups: int | None = None, eps: float = 1e-5):
        self.prefix = prefix
        self.channels = channels
        self.groups = math.gcd(8, channels) if groups is None else groups
        if channels % self.groups:
            raise ShapeError(f"{prefix}: {channels} channels not divisible into {self.groups} groups")
        self.eps = eps

    def init_params(self, rng: np.random.Generator, params: dict) -> None:
        params[f"{self.prefix}.g"] = np.ones(self.channels, dtype=np.float32)
        params[f"{self.prefix}.b"] = np.zeros(self.channels, dtype=np.float32)

    def fwd(self, p: dict, x: np.ndarray):
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"{self.prefix}: {c} channels != {self.channels}")
        x2 = x.reshape(n * self.groups, (c // self.groups) * h * w)
        xh, inv = _rownorm_forward(x2, self.eps)
        xh4 = xh.reshape(n, c, h, w)
        gain = p[f"{self.prefix}.g"].reshape(1, c, 1, 1)
        y = xh4 * gain + p[f"{self.prefix}.b"].reshape(1, c, 1, 1)
        return y, (xh, inv, gain, x.shape)

    def bwd(self, g: dict, cache, dy: np.ndarray):
        xh, inv, gain, shape = cache
        n, c, h, w = shape
        xh4 = xh.reshape(n, c, h, w)
        accumulate_grad(g, f"{self.prefix}.g", (dy * xh4).sum(axis=(0, 2, 3)))
        accumulate_grad(g, f"{self.prefix}.b", dy.sum(axis=(0, 2, 3)))
        dxh = (dy * gain).reshape(n * self.groups, (c // self.groups) * h * w)
        dx = _rownorm_backward(dxh, xh, inv)
        return dx.reshape(shape)


# ---------------------------------------------------------------------------
# convolution


class Conv2d:
    """3x3 / 1x1 convolution over (N, C, H, W) via im2col."""

    def __init__(self, prefix: str, c_in: int, c_out: int, kernel: int = 3,
                 stride: int = 1, pad: int | None = None, zero_out: bool = False):
        self.prefix = prefix
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad
        self.zero_out = zero_out

    def init_params(self, rng: np.random.Generator, params: dict) -> None:
        shape = (self.c_out, self.c_in, self.kernel, self.kernel)
        if self.zero_out:
            params[f"{self.prefix}.w"] = np.zeros(shape, dtype=np.float32)
        else:
            params[f"{self.prefix}.w"] = uniform_init(rng, shape, self.c_in * self.kernel * self.kernel)
        params[f"{self.prefix}.b"] = np.zeros(self.c_out, dtype=np.float32)

    def _im2col(self, xp: np.ndarray, oh: int, ow: int) -> np.ndarray:
        n, c = xp.shape[:2]
        kk, s = self.kernel, self.stride
        cols = np.empty((n, c, kk, kk, oh, ow), dtype=xp.dtype)
        for kh in range(kk):
            for kw in range(kk):
                cols[:, :, kh, kw] = xp[:, :, kh:kh + s * oh:s, kw:kw + s * ow:s]
        return cols.reshape(n, c * kk * kk, oh * ow)

    def fwd(self, p: dict, x: np.ndarray):
        n, c, h, w = x.shape
        if c != self.c_in:
            raise ShapeError(f"{self.prefix}: {c} channels != {self.c_in}")
        kk, s, pd = self.kernel, self.stride, self.pad
        oh = (h + 2 * pd - kk) // s + 1
        ow = (w + 2 * pd - kk) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (pd, pd))) if pd else x
        cols = self._im2col(xp, oh, ow)  # (N, C*K*K, OH*OW)
        wf = p[f"{self.prefix}.w"].reshape(self.c_out, -1)
        y = (wf @ cols) + p[f"{self.prefix}.b"][:, None]
        y = y.reshape(n, self.c_out, oh, ow)
        return y, (cols, x.shape, xp.shape)

    def bwd(self, g: dict, p: dict, cache, dy: np.ndarray):
        cols, x_shape, xp_shape = cache
        n, _, h, w = x_shape
        kk, s, pd = self.kernel, self.stride, self.pad
        oh, ow = dy.shape[2], dy.shape[3]
        dyf = dy.reshape(n, self.c_out, oh * ow)
        accumulate_grad(g, f"{self.prefix}.b", dy.sum(axis=(0, 2, 3)))
        dw = np.tensordot(dyf, cols, axes=([0, 2], [0, 2]))  # (OC, C*K*K)
        accumulate_grad(g, f"{self.prefix}.w", dw.reshape(self.c_out, self.c_in, kk, kk))
        wf = p[f"{self.prefix}.w"].reshape(self.c_out, -1)
        dcols = np.swapaxes(wf, 0, 1) @ dyf  # (N, C*K*K, OH*OW)
        dcols = dcols.reshape(n, self.c_in, kk, kk, oh, ow)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for kh in range(kk):
            for kw in range(kk):
                dxp[:, :, kh:kh + s * oh:s, kw:kw + s * ow:s] += dcols[:, :, kh, kw]
        if pd:
            return dxp[:, :, pd:pd + h, pd:pd + w]
        return dxp


def upsample2x_forward(x: np.ndarray):
    """Nearest-neighbor 2x upsample of (N, C, H, W)."""
    y = x.repeat(2, axis=2).repeat(2, axis=3)
    return y, x.shape


def upsample2x_backward(cache, dy: np.ndarray):
    n, c, h, w = cache
    return dy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


# ---------------------------------------------------------------------------
# position tables


def sinusoid_table(n_pos: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position table, (n_pos, dim) float64.

    Row 0 is (0, 1, 0, 1, ...): sin at even slots, cos at odd slots.
    """
    pos = np.arange(n_pos, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / dim)
    table = np.empty((n_pos, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a scalar step index, (dim,) float64."""
    return sinusoid_table(t + 1, dim)[t]


# ---------------------------------------------------------------------------
# losses


def _check_same_shape(pred: np.ndarray, target: np.ndarray, op: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{op}: shape {pred.shape} vs {target.shape}")


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute error over all entries."""
    _check_same_shape(pred, target, "l1_loss")
    return float(np.abs(pred - target).mean())


def l1_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d/dpred of l1_loss; sign(0) contributes 0."""
    _check_same_shape(pred, target, "l1_loss")
    return np.sign(pred - target) / pred.size


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all entries."""
    _check_same_shape(pred, target, "mse_loss")
    d = pred - target
    return float((d * d).mean())


def mse_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    _check_same_shape(pred, target, "mse_loss")
    return (pred - target) * (2.0 / pred.size)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0,
              trainable: Iterable[str] | None = None) -> AdamState:
    """Adam state over the named subset of params (all names by default).

    weight_decay > 0 gives AdamW: decoupled decay applied to the parameter
    value before the moment update.
    """
    names = list(params) if trainable is None else list(trainable)
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    for name in names:
        state.m[name] = np.zeros_like(params[name])
        state.v[name] = np.zeros_like(params[name])
    return state


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam/AdamW update, in place.

    Updates exactly the parameters named in the state; extra grads are
    ignored, a missing grad for a tracked parameter raises.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in state.m:
        if name not in grads:
            raise MissingGradError(f"no gradient for parameter {name!r}")
        p = params[name]
        gr = grads[name]
        if gr.shape != p.shape:
            raise ShapeError(f"adam_step: grad shape {gr.shape} != param {p.shape} for {name!r}")
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * gr
        v *= b2
        v += (1.0 - b2) * (gr * gr)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# gradient check


def gradcheck(fn: Callable[[dict], tuple], params: dict, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn(params) must return (loss, grads) with a grad entry for every
    parameter.  Meant to run with float64 params: the same forward code is
    evaluated at +/- h per entry.  Relative error per entry is
    |a - n| / max(|a|, |n|, 1e-6), so a gradient off by 2x reports ~0.5
    while directions whose true gradient is structurally zero (softmax
    shift invariance makes key biases exactly irrelevant) only see
    cancellation noise and are not flagged.
    """
    loss0, grads = fn(params)
    if not np.isfinite(loss0):
        raise DivergenceError(f"non-finite loss {loss0!r} in gradcheck")
    worst = 0.0
    for name in sorted(params):
        if name not in grads:
            raise MissingGradError(f"fn returned no gradient for {name!r}")
        p = params[name]
        a = np.asarray(grads[name])
        if a.shape != p.shape:
            raise ShapeError(f"gradcheck: grad shape {a.shape} != param {p.shape} for {name!r}")
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            lp = fn(params)[0]
            p[idx] = orig - h
            lm = fn(params)[0]
            p[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise DivergenceError(f"non-finite loss while perturbing {name!r}{idx}")
            num = (lp - lm) / (2.0 * h)
            err = abs(float(a[idx]) - num) / max(abs(float(a[idx])), abs(num), 1e-6)
            worst = max(worst, err)
    return worst
