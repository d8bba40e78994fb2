"""The latent video denoiser and its conditioning networks.

Four parameter subtrees:
  backbone.*   U-shaped noise predictor over 48-channel latents
  refnet.*     time-free copy of the backbone's spatial path; emits the
               feature maps the backbone's attention concatenates as
               extra keys/values (appearance injection)
  poseguider.* conv pyramid over rendered pose images, with per-scale
               cross-attention onto reference-landmark features and
               zero-initialized output projections (guidance starts silent)
  motion.*     temporal attention units, zero-initialized output
               projections (identity at init, trained in stage 2)

The backbone is fully convolutional: parameters are independent of the
spatial size, so models trained at one resolution run at another.
"""

from __future__ import annotations

import numpy as np

from .. import nn
from ..errors import ShapeError
from .blocks import ResBlock, SpatialSelfAttention, TemporalAttention, TimeEmbedding, Upsample
from .latent import LATENT_CHANNELS
from .schedule import NoiseSchedule, ddim_sample


class DenoiseBackbone:
    """Three resolutions, base 32 channels doubling per level, attention at
    the lowest resolution (three sites), guidance added at each down-block
    scale, seven optional temporal units."""

    def __init__(self, base: int = 32, emb_dim: int = 128, n_heads: int = 4, max_frames: int = 64):
        self.base = base
        self.emb_dim = emb_dim
        c0, c1, c2 = base, base * 2, base * 4
        self.channels = (c0, c1, c2)
        self.temb = TimeEmbedding("backbone.temb", emb_dim)
        self.conv_in = nn.Conv2d("backbone.conv_in", LATENT_CHANNELS, c0)
        self.down0 = ResBlock("backbone.down0", c0, c0, emb_dim)
        self.ds0 = nn.Conv2d("backbone.ds0", c0, c1, stride=2)
        self.down1 = ResBlock("backbone.down1", c1, c1, emb_dim)
        self.ds1 = nn.Conv2d("backbone.ds1", c1, c2, stride=2)
        self.down2 = ResBlock("backbone.down2", c2, c2, emb_dim)
        self.attn_down2 = SpatialSelfAttention("backbone.attn_down2", c2, n_heads)
        self.mid1 = ResBlock("backbone.mid1", c2, c2, emb_dim)
        self.attn_mid = SpatialSelfAttention("backbone.attn_mid", c2, n_heads)
        self.mid2 = ResBlock("backbone.mid2", c2, c2, emb_dim)
        self.up2 = ResBlock("backbone.up2", c2 * 2, c2, emb_dim)
        self.attn_up2 = SpatialSelfAttention("backbone.attn_up2", c2, n_heads)
        self.us2 = Upsample("backbone.us2", c2, c1)
        self.up1 = ResBlock("backbone.up1", c1 * 2, c1, emb_dim)
        self.us1 = Upsample("backbone.us1", c1, c0)
        self.up0 = ResBlock("backbone.up0", c0 * 2, c0, emb_dim)
        self.gn_out = nn.GroupNorm("backbone.gn_out", c0)
        self.conv_out = nn.Conv2d("backbone.conv_out", c0, LATENT_CHANNELS, zero_out=True)
        motion_channels = (c0, c1, c2, c2, c2, c1, c0)  # one unit per resolution visit
        self.motion = [
            TemporalAttention(f"motion.t{i}", ch, n_heads, max_frames)
            for i, ch in enumerate(motion_channels)
        ]

    def init_params(self, rng, params):
        self.temb.init_params(rng, params)
        self.conv_in.init_params(rng, params)
        for blk in (self.down0, self.down1, self.down2, self.mid1, self.mid2,
                    self.up2, self.up1, self.up0):
            blk.init_params(rng, params)
        self.ds0.init_params(rng, params)
        self.ds1.init_params(rng, params)
        for attn in (self.attn_down2, self.attn_mid, self.attn_up2):
            attn.init_params(rng, params)
        self.us2.init_params(rng, params)
        self.us1.init_params(rng, params)
        self.gn_out.init_params(rng, params)
        self.conv_out.init_params(rng, params)
        for unit in self.motion:
            unit.init_params(rng, params)

    def fwd(self, p, lat, ts, ref_feats=None, guidance=None, motion_enabled=False):
        """lat: (F, 48, h, w); ts: int or (F,); ref_feats/guidance: 3-lists."""
        lat = np.asarray(lat)
        if lat.ndim != 4 or lat.shape[1] != LATENT_CHANNELS:
            raise ShapeError(f"latents must be (F, {LATENT_CHANNELS}, h, w), got {lat.shape}")
        f = lat.shape[0]
        ts = np.broadcast_to(np.atleast_1d(np.asarray(ts, dtype=np.int64)), (f,))
        if ref_feats is not None and len(ref_feats) != 3:
            raise ShapeError(f"expected 3 reference feature maps, got {len(ref_feats)}")
        if guidance is not None and len(guidance) != 3:
            raise ShapeError(f"expected 3 guidance maps, got {len(guidance)}")
        mcaches = [None] * len(self.motion)

        def motion_step(i, x):
            if not motion_enabled:
                return x
            y, mc = self.motion[i].fwd(p, x)
            mcaches[i] = mc
            return y

        emb, c_temb = self.temb.fwd(p, ts)
        x, c_in = self.conv_in.fwd(p, lat)
        x, c_d0 = self.down0.fwd(p, x, emb)
        if guidance is not None:
            x = x + guidance[0]
        x = motion_step(0, x)
        skip0 = x
        x, c_ds0 = self.ds0.fwd(p, x)
        x, c_d1 = self.down1.fwd(p, x, emb)
        if guidance is not None:
            x = x + guidance[1]
        x = motion_step(1, x)
        skip1 = x
        x, c_ds1 = self.ds1.fwd(p, x)
        x, c_d2 = self.down2.fwd(p, x, emb)
        x, c_a2 = self.attn_down2.fwd(p, x, None if ref_feats is None else ref_feats[0])
        if guidance is not None:
            x = x + guidance[2]
        x = motion_step(2, x)
        skip2 = x
        x, c_m1 = self.mid1.fwd(p, x, emb)
        x, c_am = self.attn_mid.fwd(p, x, None if ref_feats is None else ref_feats[1])
        x, c_m2 = self.mid2.fwd(p, x, emb)
        x = motion_step(3, x)
        x = np.concatenate([x, skip2], axis=1)
        x, c_u2 = self.up2.fwd(p, x, emb)
        x, c_au = self.attn_up2.fwd(p, x, None if ref_feats is None else ref_feats[2])
        x = motion_step(4, x)
        x, c_us2 = self.us2.fwd(p, x)
        x = np.concatenate([x, skip1], axis=1)
        x, c_u1 = self.up1.fwd(p, x, emb)
        x = motion_step(5, x)
        x, c_us1 = self.us1.fwd(p, x)
        x = np.concatenate([x, skip0], axis=1)
        x, c_u0 = self.up0.fwd(p, x, emb)
        x = motion_step(6, x)
        a, c_gn = self.gn_out.fwd(p, x)
        r, c_r = nn.relu_forward(a)
        y, c_out = self.conv_out.fwd(p, r)
        cache = (c_temb, c_in, c_d0, c_ds0, c_d1, c_ds1, c_d2, c_a2, c_m1, c_am,
                 c_m2, c_u2, c_au, c_us2, c_u1, c_us1, c_u0, c_gn, c_r, c_out,
                 mcaches, motion_enabled, guidance is not None, ref_feats is not None)
        return y, cache

    def bwd(self, g, p, cache, dy):
        """Returns (dref_feats, dguidance): 3-lists or None, mirroring fwd."""
        (c_temb, c_in, c_d0, c_ds0, c_d1, c_ds1, c_d2, c_a2, c_m1, c_am,
         c_m2, c_u2, c_au, c_us2, c_u1, c_us1, c_u0, c_gn, c_r, c_out,
         mcaches, motion_enabled, has_guid, has_ref) = cache

        def motion_back(i, dx):
            if not motion_enabled:
                return dx
            return self.motion[i].bwd(g, mcaches[i], dx)

        demb_total = None

        def res_back(blk, c, dx):
            nonlocal demb_total
            dx, demb = blk.bwd(g, p, c, dx)
            if demb is not None:
                demb_total = demb if demb_total is None else demb_total + demb
            return dx

        dr = self.conv_out.bwd(g, p, c_out, dy)
        da = nn.relu_backward(c_r, dr)
        dx = self.gn_out.bwd(g, c_gn, da)
        dx = motion_back(6, dx)
        dx = res_back(self.up0, c_u0, dx)
        c0 = self.channels[0]
        dx, dskip0 = dx[:, :c0], dx[:, c0:]
        dx = self.us1.bwd(g, p, c_us1, dx)
        dx = motion_back(5, dx)
        dx = res_back(self.up1, c_u1, dx)
        c1 = self.channels[1]
        dx, dskip1 = dx[:, :c1], dx[:, c1:]
        dx = self.us2.bwd(g, p, c_us2, dx)
        dx = motion_back(4, dx)
        dx, dref2 = self.attn_up2.bwd(g, c_au, dx)
        dx = res_back(self.up2, c_u2, dx)
        c2 = self.channels[2]
        dx, dskip2 = dx[:, :c2], dx[:, c2:]
        dx = motion_back(3, dx)
        dx = res_back(self.mid2, c_m2, dx)
        dx, dref1 = self.attn_mid.bwd(g, c_am, dx)
        dx = res_back(self.mid1, c_m1, dx)
        dx = dx + dskip2
        dx = motion_back(2, dx)
        dguid2 = dx if has_guid else None
        dx, dref0 = self.attn_down2.bwd(g, c_a2, dx)
        dx = res_back(self.down2, c_d2, dx)
        dx = self.ds1.bwd(g, p, c_ds1, dx)
        dx = dx + dskip1
        dx = motion_back(1, dx)
        dguid1 = dx if has_guid else None
        dx = res_back(self.down1, c_d1, dx)
        dx = self.ds0.bwd(g, p, c_ds0, dx)
        dx = dx + dskip0
        dx = motion_back(0, dx)
        dguid0 = dx if has_guid else None
        dx = res_back(self.down0, c_d0, dx)
        self.conv_in.bwd(g, p, c_in, dx)
        if demb_total is not None:
            self.temb.bwd(g, c_temb, demb_total)
        dref = [dref0, dref1, dref2] if has_ref else None
        dguid = [dguid0, dguid1, dguid2] if has_guid else None
        return dref, dguid


class ReferenceNet:
    """Time-free spatial copy of the backbone path; emits the post-attention
    feature maps at the three attention sites for KV concatenation."""

    def __init__(self, base: int = 32, n_heads: int = 4):
        c0, c1, c2 = base, base * 2, base * 4
        self.channels = (c0, c1, c2)
        self.conv_in = nn.Conv2d("refnet.conv_in", LATENT_CHANNELS, c0)
        self.down0 = ResBlock("refnet.down0", c0, c0)
        self.ds0 = nn.Conv2d("refnet.ds0", c0, c1, stride=2)
        self.down1 = ResBlock("refnet.down1", c1, c1)
        self.ds1 = nn.Conv2d("refnet.ds1", c1, c2, stride=2)
        self.down2 = ResBlock("refnet.down2", c2, c2)
        self.attn_down2 = SpatialSelfAttention("refnet.attn_down2", c2, n_heads)
        self.mid1 = ResBlock("refnet.mid1", c2, c2)
        self.attn_mid = SpatialSelfAttention("refnet.attn_mid", c2, n_heads)
        self.mid2 = ResBlock("refnet.mid2", c2, c2)
        self.up2 = ResBlock("refnet.up2", c2 * 2, c2)
        self.attn_up2 = SpatialSelfAttention("refnet.attn_up2", c2, n_heads)

    def init_params(self, rng, params):
        for layer in (self.conv_in, self.down0, self.ds0, self.down1, self.ds1,
                      self.down2, self.attn_down2, self.mid1, self.attn_mid,
                      self.mid2, self.up2, self.attn_up2):
            layer.init_params(rng, params)

    def fwd(self, p, ref_lat):
        """(48, h, w) or (N, 48, h, w) -> 3 feature maps, batched likewise."""
        ref_lat = np.asarray(ref_lat)
        squeeze = ref_lat.ndim == 3
        if squeeze:
            ref_lat = ref_lat[None]
        if ref_lat.ndim != 4 or ref_lat.shape[1] != LATENT_CHANNELS:
            raise ShapeError(f"reference latent must be (48, h, w) or (N, 48, h, w), got {ref_lat.shape}")
        x, c_in = self.conv_in.fwd(p, ref_lat)
        x, c_d0 = self.down0.fwd(p, x)
        x, c_ds0 = self.ds0.fwd(p, x)
        x, c_d1 = self.down1.fwd(p, x)
        x, c_ds1 = self.ds1.fwd(p, x)
        x, c_d2 = self.down2.fwd(p, x)
        x, c_a2 = self.attn_down2.fwd(p, x)
        f0 = x
        skip2 = x
        x, c_m1 = self.mid1.fwd(p, x)
        x, c_am = self.attn_mid.fwd(p, x)
        f1 = x
        x, c_m2 = self.mid2.fwd(p, x)
        x = np.concatenate([x, skip2], axis=1)
        x, c_u2 = self.up2.fwd(p, x)
        x, c_au = self.attn_up2.fwd(p, x)
        f2 = x
        feats = [f0[0], f1[0], f2[0]] if squeeze else [f0, f1, f2]
        cache = (c_in, c_d0, c_ds0, c_d1, c_ds1, c_d2, c_a2, c_m1, c_am, c_m2,
                 c_u2, c_au, squeeze)
        return feats, cache

    def bwd(self, g, p, cache, dfeats):
        (c_in, c_d0, c_ds0, c_d1, c_ds1, c_d2, c_a2, c_m1, c_am, c_m2,
         c_u2, c_au, squeeze) = cache
        df0, df1, df2 = dfeats
        if squeeze:
            df0, df1, df2 = df0[None], df1[None], df2[None]
        dx, _ = self.attn_up2.bwd(g, c_au, df2)
        dx, _ = self.up2.bwd(g, p, c_u2, dx)
        c2 = self.channels[2]
        dx, dskip2 = dx[:, :c2], dx[:, c2:]
        dx, _ = self.mid2.bwd(g, p, c_m2, dx)
        dx = dx + df1
        dx, _ = self.attn_mid.bwd(g, c_am, dx)
        dx, _ = self.mid1.bwd(g, p, c_m1, dx)
        dx = dx + dskip2 + df0
        dx, _ = self.attn_down2.bwd(g, c_a2, dx)
        dx, _ = self.down2.bwd(g, p, c_d2, dx)
        dx = self.ds1.bwd(g, p, c_ds1, dx)
        dx, _ = self.down1.bwd(g, p, c_d1, dx)
        dx = self.ds0.bwd(g, p, c_ds0, dx)
        dx, _ = self.down0.bwd(g, p, c_d0, dx)
        self.conv_in.bwd(g, p, c_in, dx)


class PoseGuider:
    """Conv pyramid over pose images; target features cross-attend to the
    reference-landmark features at each scale; zero 1x1 output projections."""

    def __init__(self, base: int = 8, n_heads: int = 4, out_channels=(32, 64, 128)):
        c0, c1, c2, c3 = base, base * 2, base * 4, base * 8
        self.feat_channels = (c1, c2, c3)
        self.conv0 = nn.Conv2d("poseguider.conv0", 3, c0, stride=2)
        self.conv1 = nn.Conv2d("poseguider.conv1", c0, c1, stride=2)
        self.conv2 = nn.Conv2d("poseguider.conv2", c1, c2, stride=2)
        self.conv3 = nn.Conv2d("poseguider.conv3", c2, c3, stride=2)
        self.ln_q = [nn.LayerNorm(f"poseguider.scale{i}.ln_q", c) for i, c in enumerate(self.feat_channels)]
        self.ln_kv = [nn.LayerNorm(f"poseguider.scale{i}.ln_kv", c) for i, c in enumerate(self.feat_channels)]
        self.attn = [nn.MultiHeadAttention(f"poseguider.scale{i}.mha", c, n_heads)
                     for i, c in enumerate(self.feat_channels)]
        self.proj = [nn.Conv2d(f"poseguider.scale{i}.proj", c, out, kernel=1, pad=0, zero_out=True)
                     for i, (c, out) in enumerate(zip(self.feat_channels, out_channels))]

    def init_params(self, rng, params):
        for conv in (self.conv0, self.conv1, self.conv2, self.conv3):
            conv.init_params(rng, params)
        for i in range(3):
            self.ln_q[i].init_params(rng, params)
            self.ln_kv[i].init_params(rng, params)
            self.attn[i].init_params(rng, params)
            self.proj[i].init_params(rng, params)

    @staticmethod
    def normalize(images: np.ndarray) -> np.ndarray:
        """uint8 (..., H, W, 3) -> float32 (..., 3, H, W) in [-1, 1]."""
        x = np.asarray(images).astype(np.float32) / np.float32(127.5) - np.float32(1.0)
        return np.ascontiguousarray(np.moveaxis(x, -1, -3))

    def fwd(self, p, pose_images, ref_lmk):
        """pose_images: (F, 3, H, W); ref_lmk: (3, H, W) shared or (F, 3, H, W).

        Returns 3 per-frame guidance maps at the backbone's down-block
        scales, all exactly zero while the output projections are zero.
        """
        pose_images = np.asarray(pose_images)
        ref_lmk = np.asarray(ref_lmk)
        if pose_images.ndim != 4 or pose_images.shape[1] != 3:
            raise ShapeError(f"pose images must be (F, 3, H, W), got {pose_images.shape}")
        shared = ref_lmk.ndim == 3
        ref_stack = ref_lmk[None] if shared else ref_lmk
        if ref_stack.shape[1:] != pose_images.shape[1:]:
            raise ShapeError(f"reference landmark image {ref_lmk.shape} does not match pose images {pose_images.shape}")
        if not shared and ref_stack.shape[0] != pose_images.shape[0]:
            raise ShapeError("per-frame reference landmarks must align 1:1 with pose images")
        f = pose_images.shape[0]
        n_ref = ref_stack.shape[0]
        stack = np.concatenate([pose_images, ref_stack], axis=0)
        h, c0 = self.conv0.fwd(p, stack)
        r0, cr0 = nn.relu_forward(h)
        h, c1 = self.conv1.fwd(p, r0)
        r1, cr1 = nn.relu_forward(h)
        h, c2 = self.conv2.fwd(p, r1)
        r2, cr2 = nn.relu_forward(h)
        h, c3 = self.conv3.fwd(p, r2)
        r3, cr3 = nn.relu_forward(h)
        outs = []
        scale_caches = []
        for i, feats in enumerate((r1, r2, r3)):
            tgt, tshape = _split_tokens(feats[:f])
            ref_tok, rshape = _split_tokens(feats[f:])
            q, cq = self.ln_q[i].fwd(p, tgt)
            kv, ckv = self.ln_kv[i].fwd(p, ref_tok)
            kv_b = np.broadcast_to(kv[0], (f,) + kv.shape[1:]) if shared else kv
            att, cmha = self.attn[i].fwd(p, q, np.ascontiguousarray(kv_b), mask=None)
            mixed = tgt + att
            maps = _merge_tokens(mixed, tshape)
            out, cproj = self.proj[i].fwd(p, maps)
            outs.append(out)
            scale_caches.append((cq, ckv, cmha, cproj, tshape, rshape))
        cache = (c0, cr0, c1, cr1, c2, cr2, c3, cr3, scale_caches, f, n_ref, shared)
        return outs, cache

    def bwd(self, g, p, cache, dguidance):
        c0, cr0, c1, cr1, c2, cr2, c3, cr3, scale_caches, f, n_ref, shared = cache
        dfeats = []
        for i, dg in enumerate(dguidance):
            cq, ckv, cmha, cproj, tshape, rshape = scale_caches[i]
            dmaps = self.proj[i].bwd(g, p, cproj, dg)
            dmixed, _ = _split_tokens(dmaps)
            dq, dkv_b = self.attn[i].bwd(g, cmha, dmixed)
            dtgt = dmixed + self.ln_q[i].bwd(g, cq, dq)
            if shared:
                dkv = dkv_b.sum(axis=0, keepdims=True)
            else:
                dkv = dkv_b
            dref_tok = self.ln_kv[i].bwd(g, ckv, dkv)
            dfeat = np.concatenate([_merge_tokens(dtgt, tshape), _merge_tokens(dref_tok, rshape)], axis=0)
            dfeats.append(dfeat)
        dr3 = nn.relu_backward(cr3, dfeats[2])
        dr2 = self.conv3.bwd(g, p, c3, dr3)
        dr2 = dr2 + dfeats[1]
        dr2 = nn.relu_backward(cr2, dr2)
        dr1 = self.conv2.bwd(g, p, c2, dr2)
        dr1 = dr1 + dfeats[0]
        dr1 = nn.relu_backward(cr1, dr1)
        dr0 = self.conv1.bwd(g, p, c1, dr1)
        dr0 = nn.relu_backward(cr0, dr0)
        self.conv0.bwd(g, p, c0, dr0)


def _split_tokens(x):
    n, c, h, w = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1).reshape(n, h * w, c)), (n, c, h, w)


def _merge_tokens(tok, shape):
    n, c, h, w = shape
    return np.ascontiguousarray(tok.reshape(n, h, w, c).transpose(0, 3, 1, 2))


class Lmk2Video:
    """Bundle of the four subnetworks plus the conditioning plumbing."""

    def __init__(self, base: int = 32, emb_dim: int = 128, n_heads: int = 4,
                 max_frames: int = 64, guider_base: int = 8):
        self.backbone = DenoiseBackbone(base, emb_dim, n_heads, max_frames)
        self.refnet = ReferenceNet(base, n_heads)
        self.poseguider = PoseGuider(guider_base, n_heads,
                                     out_channels=self.backbone.channels)

    def init_params(self, seed: int = 0) -> dict:
        rng = np.random.default_rng(seed)
        params: dict = {}
        self.backbone.init_params(rng, params)
        self.refnet.init_params(rng, params)
        self.poseguider.init_params(rng, params)
        return params

    def reference_features(self, params, ref_latent):
        """Cached once per reference; no time conditioning anywhere."""
        feats, _ = self.refnet.fwd(params, ref_latent)
        return feats

    def pose_guidance(self, params, pose_images, ref_lmk_image):
        out, _ = self.poseguider.fwd(params, pose_images, ref_lmk_image)
        return out

    def denoise(self, params, latents, t, ref_feats=None, guidance=None,
                motion_enabled=False):
        y, _ = self.backbone.fwd(params, latents, t, ref_feats, guidance, motion_enabled)
        return y

    def generate_clip(self, params, schedule: NoiseSchedule, pose_images, ref_latent,
                      ref_lmk_image, steps: int, seed: int = 0,
                      motion_enabled: bool = True) -> np.ndarray:
        """DDIM-sample one clip of latents conditioned on pose images and a
        reference; pose_images/ref_lmk_image as float (F,3,H,W)/(3,H,W)."""
        ref_feats = self.reference_features(params, ref_latent)
        guidance = self.pose_guidance(params, pose_images, ref_lmk_image)
        f = pose_images.shape[0]
        h, w = ref_latent.shape[-2:]

        def denoise_fn(x, t, _cond):
            return self.denoise(params, x, t, ref_feats, guidance, motion_enabled)

        return ddim_sample((f, LATENT_CHANNELS, h, w), steps, schedule, denoise_fn, seed=seed)
