"""Free-form denoisers F_theta: an MLP for 2D point clouds, a small U-Net
for images, and the attention-gated conditional U-Net for paired denoising.

All networks are shape-preserving (output shape = sample shape) and take
the noise level as a per-sample array, injected through a sinusoidal
embedding of log(sigma)/4. The conditional variant runs the condition
image through its own encoder and merges each decoder skip connection
through a weighted attention gate: the sigmoid attention map is squared,
applied to the skip, and the projected condition features are blended in
with weight w (default 0.8).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import Conv2d, GroupNorm, Linear, Module, SelfAttention2d


@dataclass(frozen=True)
class NetConfig:
    """U-Net size knobs (the conditional net reuses the same fields)."""

    res_blocks_per_stage: int = 2
    base_channels: int = 32
    channel_multipliers: tuple = (1, 2, 2)
    attention_resolutions: tuple = (16,)
    dropout: float = 0.0

    def __post_init__(self):
        if self.res_blocks_per_stage < 1:
            raise ValueError(f"res_blocks_per_stage must be >= 1, got {self.res_blocks_per_stage}")
        if self.base_channels < 8:
            raise ValueError(f"base_channels must be >= 8, got {self.base_channels}")
        if not self.channel_multipliers or any(m < 1 for m in self.channel_multipliers):
            raise ValueError("channel_multipliers must be a nonempty list of positive ints")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class WagConfig:
    """Weighted attention gate knobs.

    w scales the projected condition features added after gating;
    inter_channels sizes the gating bottleneck (0 = half the skip
    channels, at least 8).
    """

    w: float = 0.8
    inter_channels: int = 0

    def __post_init__(self):
        if not 0 <= self.w <= 1:
            raise ValueError(f"w must lie in [0, 1], got {self.w}")
        if self.inter_channels < 0:
            raise ValueError("inter_channels must be >= 0")


def _norm_groups(channels: int) -> int:
    g = min(8, channels)
    while channels % g:
        g -= 1
    return g


def input_scale(sigma, ndim: int, sigma_data: float = 0.5) -> np.ndarray:
    """Variance-normalizing input scale 1/sqrt(sigma^2 + sigma_data^2).

    Applied to x before the first layer so activation magnitude stays flat
    across noise levels; the skip/output scalings remain the caller's
    business. Shaped to broadcast over a batch with ndim axes.
    """
    s = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    c = 1.0 / np.sqrt(s * s + sigma_data * sigma_data)
    return c.reshape((-1,) + (1,) * (ndim - 1)).astype(np.float32)


def sigma_features(sigma, dim: int) -> np.ndarray:
    """Raw sinusoidal features of log(sigma)/4 at dim/2 geometric frequencies."""
    if dim < 2 or dim % 2:
        raise ValueError(f"feature dim must be even and >= 2, got {dim}")
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    t = np.log(sigma) / 4.0
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), half))
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class SigmaEmbedding(Module):
    """Sinusoidal noise-level features refined by a 2-layer MLP; output length dim."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.dim = dim
        self.dtype = dtype
        self.l1 = Linear(dim, dim, rng, dtype=dtype)
        self.l2 = Linear(dim, dim, rng, dtype=dtype)

    def forward(self, sigma):
        feats = sigma_features(sigma, self.dim).astype(self.dtype)
        return self.l2(ad.silu(self.l1(ad.Tensor(feats))))


def sigma_embedding(sigma, dim: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Functional form: embed sigma with a freshly built (seeded) embedding module."""
    rng = np.random.default_rng(0) if rng is None else rng
    return SigmaEmbedding(dim, rng).forward(sigma).data


class MlpNet(Module):
    """Denoiser for flat d-dimensional points: concat(x, sigma-embedding) -> MLP -> d."""

    def __init__(self, hidden_sizes, in_dim: int, rng: np.random.Generator,
                 emb_dim: int = 64, sigma_data: float = 0.5, dtype=np.float32):
        if in_dim < 1:
            raise ValueError(f"in_dim must be >= 1, got {in_dim}")
        self.in_dim = in_dim
        self.sigma_data = sigma_data
        self.embed = SigmaEmbedding(emb_dim, rng, dtype=dtype)
        self.layers = []
        prev = in_dim + emb_dim
        for width in hidden_sizes:
            self.layers.append(Linear(prev, width, rng, dtype=dtype))
            prev = width
        # Zero-init output: the raw net starts at F = 0.
        self.out = Linear(prev, in_dim, rng, zero_init=True, dtype=dtype)

    def forward(self, x, sigma):
        x = ad.as_tensor(x)
        x = ad.mul(x, input_scale(sigma, 2, self.sigma_data))
        h = ad.concat([x, self.embed(sigma)], axis=1)
        for layer in self.layers:
            h = ad.silu(layer(h))
        return self.out(h)


def build_mlp(hidden_sizes, in_dim: int, rng: np.random.Generator | None = None,
              emb_dim: int = 64, sigma_data: float = 0.5, dtype=np.float32) -> MlpNet:
    rng = np.random.default_rng(0) if rng is None else rng
    return MlpNet(hidden_sizes, in_dim, rng, emb_dim=emb_dim,
                  sigma_data=sigma_data, dtype=dtype)


class ResBlock(Module):
    """norm-act-conv twice with the noise embedding added between, plus skip."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, rng: np.random.Generator,
                 dropout: float = 0.0, dtype=np.float32):
        self.dropout = dropout
        self.norm1 = GroupNorm(in_ch, num_groups=_norm_groups(in_ch), dtype=dtype)
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, dtype=dtype)
        self.emb_proj = Linear(emb_dim, out_ch, rng, dtype=dtype)
        self.norm2 = GroupNorm(out_ch, num_groups=_norm_groups(out_ch), dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, zero_init=True, dtype=dtype)
        self.skip = Conv2d(in_ch, out_ch, 1, rng, bias=False, dtype=dtype) if in_ch != out_ch else None

    def forward(self, x, emb, dropout_rng=None):
        h = self.conv1(ad.silu(self.norm1(x)))
        b, c = emb.shape[0], h.shape[1]
        h = ad.add(h, ad.reshape(self.emb_proj(ad.silu(emb)), (b, c, 1, 1)))
        h = ad.silu(self.norm2(h))
        if self.dropout > 0 and dropout_rng is not None:
            keep = (dropout_rng.random(h.shape) >= self.dropout) / (1.0 - self.dropout)
            h = ad.mul(h, keep.astype(h.data.dtype))
        h = self.conv2(h)
        return ad.add(h, x if self.skip is None else self.skip(x))


class Downsample(Module):
    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.conv = Conv2d(channels, channels, 3, rng, stride=2, padding=1, dtype=dtype)

    def forward(self, x):
        return self.conv(x)


class Upsample(Module):
    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.conv = Conv2d(channels, channels, 3, rng, dtype=dtype)

    def forward(self, x):
        return self.conv(ad.upsample_nearest2x(x))


class _Encoder(Module):
    """Stem plus per-stage residual blocks; returns one feature per stage."""

    def __init__(self, cfg: NetConfig, in_ch: int, emb_dim: int, rng: np.random.Generator, dtype=np.float32):
        base = cfg.base_channels
        self.stem = Conv2d(in_ch, base, 3, rng, dtype=dtype)
        self.stages = []
        self.downs = []
        ch = base
        for s, mult in enumerate(cfg.channel_multipliers):
            out_ch = base * mult
            blocks = []
            for _ in range(cfg.res_blocks_per_stage):
                blocks.append(ResBlock(ch, out_ch, emb_dim, rng, dropout=cfg.dropout, dtype=dtype))
                ch = out_ch
            self.stages.append(blocks)
            last = s == len(cfg.channel_multipliers) - 1
            self.downs.append(None if last else Downsample(ch, rng, dtype=dtype))
        self.out_ch = ch

    def forward(self, x, emb, attn_stages=None, dropout_rng=None):
        h = self.stem(x)
        feats = []
        for s, blocks in enumerate(self.stages):
            for blk in blocks:
                h = blk(h, emb, dropout_rng=dropout_rng)
            if attn_stages is not None and attn_stages[s] is not None:
                h = attn_stages[s](h)
            feats.append(h)
            if self.downs[s] is not None:
                h = self.downs[s](h)
        return h, feats


def _stage_resolutions(input_res: int, n_stages: int) -> list:
    res = [input_res]
    for _ in range(n_stages - 1):
        res.append(res[-1] // 2)
    return res


class UNet(Module):
    """Small encoder-bottleneck-decoder denoiser with one skip per stage."""

    def __init__(self, cfg: NetConfig, in_channels: int, out_channels: int,
                 rng: np.random.Generator, input_res: int = 0,
                 sigma_data: float = 0.5, dtype=np.float32):
        self.cfg = cfg
        self.in_channels = in_channels
        self.input_res = input_res  # 0 = defer attention placement to forward
        self.sigma_data = sigma_data
        base = cfg.base_channels
        emb_dim = base * 4
        self.emb_dim = emb_dim
        n_stages = len(cfg.channel_multipliers)
        self.embed = SigmaEmbedding(emb_dim, rng, dtype=dtype)
        self.encoder = _Encoder(cfg, in_channels, emb_dim, rng, dtype=dtype)
        stage_ch = [base * m for m in cfg.channel_multipliers]

        # Attention placement needs the input resolution at build time.
        if input_res:
            res_at = _stage_resolutions(input_res, n_stages)
            self.enc_attn = [
                SelfAttention2d(stage_ch[s], rng, dtype=dtype) if res_at[s] in cfg.attention_resolutions else None
                for s in range(n_stages)
            ]
            mid_attn = res_at[-1] in cfg.attention_resolutions
        else:
            self.enc_attn = [None] * n_stages
            mid_attn = False

        ch = self.encoder.out_ch
        self.mid1 = ResBlock(ch, ch, emb_dim, rng, dropout=cfg.dropout, dtype=dtype)
        self.mid_attn = SelfAttention2d(ch, rng, dtype=dtype) if mid_attn else None
        self.mid2 = ResBlock(ch, ch, emb_dim, rng, dropout=cfg.dropout, dtype=dtype)

        self.ups = []
        self.dec_stages = []
        self.dec_attn = []
        for s in reversed(range(n_stages)):
            self.ups.append(None if s == n_stages - 1 else Upsample(ch, rng, dtype=dtype))
            out_ch = stage_ch[s]
            blocks = [ResBlock(ch + stage_ch[s], out_ch, emb_dim, rng, dropout=cfg.dropout, dtype=dtype)]
            for _ in range(cfg.res_blocks_per_stage - 1):
                blocks.append(ResBlock(out_ch, out_ch, emb_dim, rng, dropout=cfg.dropout, dtype=dtype))
            self.dec_stages.append(blocks)
            if input_res:
                has_attn = res_at[s] in cfg.attention_resolutions
            else:
                has_attn = False
            self.dec_attn.append(SelfAttention2d(out_ch, rng, dtype=dtype) if has_attn else None)
            ch = out_ch
        self.out_norm = GroupNorm(ch, num_groups=_norm_groups(ch), dtype=dtype)
        self.out_conv = Conv2d(ch, out_channels, 3, rng, zero_init=True, dtype=dtype)
        self.dropout_rng = np.random.default_rng(0)
        self.train_mode = False

    def _check_input(self, x):
        n_stages = len(self.cfg.channel_multipliers)
        h, w = x.shape[-2], x.shape[-1]
        div = 1 << (n_stages - 1)
        if h % div or w % div:
            raise ValueError(f"input {h}x{w} not divisible by {div} across {n_stages} stages")
        if self.input_res and h != self.input_res:
            raise ValueError(f"built for {self.input_res}px inputs, got {h}")

    def forward(self, x, sigma):
        x = ad.as_tensor(x)
        self._check_input(x)
        x = ad.mul(x, input_scale(sigma, 4, self.sigma_data))
        emb = self.embed(sigma)
        drop = self.dropout_rng if (self.train_mode and self.cfg.dropout > 0) else None
        h, skips = self.encoder(x, emb, attn_stages=self.enc_attn, dropout_rng=drop)
        h = self.mid1(h, emb, dropout_rng=drop)
        if self.mid_attn is not None:
            h = self.mid_attn(h)
        h = self.mid2(h, emb, dropout_rng=drop)
        n_stages = len(self.cfg.channel_multipliers)
        for d, s in enumerate(reversed(range(n_stages))):
            if self.ups[d] is not None:
                h = self.ups[d](h)
            h = ad.concat([h, skips[s]], axis=1)
            for blk in self.dec_stages[d]:
                h = blk(h, emb, dropout_rng=drop)
            if self.dec_attn[d] is not None:
                h = self.dec_attn[d](h)
        return self.out_conv(ad.silu(self.out_norm(h)))


def build_unet(cfg: NetConfig, in_channels: int, out_channels: int,
               rng: np.random.Generator | None = None, input_res: int = 0,
               sigma_data: float = 0.5, dtype=np.float32) -> UNet:
    rng = np.random.default_rng(0) if rng is None else rng
    return UNet(cfg, in_channels, out_channels, rng, input_res=input_res,
                sigma_data=sigma_data, dtype=dtype)


class WeightedAttentionGate(Module):
    """Gate a skip connection on condition features.

    psi = sigmoid(W_psi . relu(W_g.gate + W_x.skip)); the attention map is
    psi squared (sharpens agreement), applied to the skip; the condition
    features go through a learned 1x1 projection phi and are added with
    weight w:

        out = skip * psi^2 + w * phi(cond_feat)

    All three inputs must share spatial dims (they do by construction
    here: skips, upsampled decoder state, and condition features live at
    the same scale).
    """

    def __init__(self, skip_ch: int, gate_ch: int, cond_ch: int, cfg: WagConfig,
                 rng: np.random.Generator, dtype=np.float32):
        self.w = cfg.w
        inter = cfg.inter_channels or max(skip_ch // 2, 8)
        self.wg = Conv2d(gate_ch, inter, 1, rng, bias=True, dtype=dtype)
        self.wx = Conv2d(skip_ch, inter, 1, rng, bias=False, dtype=dtype)
        self.psi = Conv2d(inter, 1, 1, rng, bias=True, dtype=dtype)
        self.phi = Conv2d(cond_ch, skip_ch, 1, rng, bias=True, dtype=dtype)

    def forward(self, skip, gate, cond_feat):
        skip, gate, cond_feat = ad.as_tensor(skip), ad.as_tensor(gate), ad.as_tensor(cond_feat)
        if skip.shape[-2:] != gate.shape[-2:] or skip.shape[-2:] != cond_feat.shape[-2:]:
            raise ValueError(
                f"spatial mismatch: skip {skip.shape[-2:]}, gate {gate.shape[-2:]}, cond {cond_feat.shape[-2:]}"
            )
        psi_map = ad.sigmoid(self.psi(ad.relu(ad.add(self.wg(gate), self.wx(skip)))))
        m = ad.mul(psi_map, psi_map)
        out = ad.mul(skip, m)
        if self.w != 0.0:
            out = ad.add(out, ad.mul(self.phi(cond_feat), self.w))
        return out

    def attention_map(self, skip, gate):
        """The squared sigmoid map alone, for inspection."""
        with ad.no_grad():
            psi_map = ad.sigmoid(self.psi(ad.relu(ad.add(self.wg(ad.as_tensor(gate)), self.wx(ad.as_tensor(skip))))))
            return (psi_map.data * psi_map.data)


def wag_forward(skip, gate, cond_feat, gate_module: WeightedAttentionGate):
    """Functional alias; the projections live in the gate module."""
    return gate_module(skip, gate, cond_feat)


class CondUNet(Module):
    """U-Net whose decoder skips pass through weighted attention gates fed
    by a separate condition encoder of identical topology."""

    def __init__(self, cfg: NetConfig, wag_cfg: WagConfig, in_channels: int, out_channels: int,
                 rng: np.random.Generator, input_res: int = 0,
                 sigma_data: float = 0.5, dtype=np.float32):
        self.unet = UNet(cfg, in_channels, out_channels, rng, input_res=input_res,
                         sigma_data=sigma_data, dtype=dtype)
        self.cond_encoder = _Encoder(cfg, in_channels, self.unet.emb_dim, rng, dtype=dtype)
        stage_ch = [cfg.base_channels * m for m in cfg.channel_multipliers]
        gate_ch = [self.unet.encoder.out_ch] + stage_ch[:0:-1]  # decoder input channels per stage
        self.gates = [
            WeightedAttentionGate(stage_ch[s], gate_ch[d], stage_ch[s], wag_cfg, rng, dtype=dtype)
            for d, s in enumerate(reversed(range(len(stage_ch))))
        ]

    @property
    def cfg(self):
        return self.unet.cfg

    def forward(self, x, sigma, cond):
        u = self.unet
        x, cond = ad.as_tensor(x), ad.as_tensor(cond)
        u._check_input(x)
        if x.shape[-2:] != cond.shape[-2:]:
            raise ValueError(f"condition {cond.shape[-2:]} does not match input {x.shape[-2:]}")
        # Condition stays clean-scale; only the noisy sample is normalized.
        x = ad.mul(x, input_scale(sigma, 4, u.sigma_data))
        emb = u.embed(sigma)
        drop = u.dropout_rng if (u.train_mode and u.cfg.dropout > 0) else None
        h, skips = u.encoder(x, emb, attn_stages=u.enc_attn, dropout_rng=drop)
        _, cond_feats = self.cond_encoder(cond, emb, dropout_rng=drop)
        h = u.mid1(h, emb, dropout_rng=drop)
        if u.mid_attn is not None:
            h = u.mid_attn(h)
        h = u.mid2(h, emb, dropout_rng=drop)
        n_stages = len(u.cfg.channel_multipliers)
        for d, s in enumerate(reversed(range(n_stages))):
            if u.ups[d] is not None:
                h = u.ups[d](h)
            gated = self.gates[d](skips[s], h, cond_feats[s])
            h = ad.concat([h, gated], axis=1)
            for blk in u.dec_stages[d]:
                h = blk(h, emb, dropout_rng=drop)
            if u.dec_attn[d] is not None:
                h = u.dec_attn[d](h)
        return u.out_conv(ad.silu(u.out_norm(h)))


def build_conditional_unet(cfg: NetConfig, wag: WagConfig, in_channels: int = 1,
                           out_channels: int | None = None, rng: np.random.Generator | None = None,
                           input_res: int = 0, sigma_data: float = 0.5,
                           dtype=np.float32) -> CondUNet:
    rng = np.random.default_rng(0) if rng is None else rng
    return CondUNet(cfg, wag, in_channels, out_channels or in_channels, rng,
                    input_res=input_res, sigma_data=sigma_data, dtype=dtype)
