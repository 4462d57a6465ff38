"""Image-conditioned UNet noise predictor with guided residual blocks.

The network takes the noisy state concatenated with the blurry input (6
channels), conditions every residual block on a sinusoidal embedding of
sqrt(alpha_bar), and injects projected guidance features into the
encoder blocks at resolutions 1/2, 1/4, and 1/8. The injection operation
is selectable: addition (default), concatenation, adaptive-group-norm,
or none (plain image-conditioned baseline that ignores the pyramid).
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .guidance import GuidancePyramid

INJECTION_MODES = ("addition", "concatenation", "adaptive-group-norm", "none")

_MODE_ALIASES = {
    "addition": "addition",
    "add": "addition",
    "concatenation": "concatenation",
    "concat": "concatenation",
    "adaptive-group-norm": "adaptive-group-norm",
    "adanorm": "adaptive-group-norm",
    "none": "none",
}


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode]
    except KeyError:
        raise ValueError(f"unknown injection mode {mode!r}; expected one of {INJECTION_MODES}")


def _num_groups(channels: int) -> int:
    # Roughly 8 channels per group. Fat groups keep the normalization
    # statistics well-conditioned even on 1x1 feature maps, where skinny
    # groups produce near-degenerate variances (and huge curvature that
    # breaks finite-difference verification).
    for g in (max(1, channels // 8), 4, 2):
        if channels % g == 0:
            return g
    return 1


def noise_level_embedding(sqrt_alpha_bar: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of the conditioning value sqrt(alpha_bar) in (0, 1]."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    freqs = torch.exp(
        torch.arange(half, dtype=sqrt_alpha_bar.dtype, device=sqrt_alpha_bar.device)
        * (-math.log(10000.0) / (half - 1))
    )
    args = sqrt_alpha_bar[:, None] * 1000.0 * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class GuidedResBlock(nn.Module):
    """Residual block with noise-level conditioning and optional guidance.

    The guidance argument `g` is the already-projected feature map for
    this block's level (channel count = out_ch, or 2*out_ch for
    adaptive-group-norm). Addition injects it before the second conv;
    concatenation fuses it with a bias-free 1x1 conv; adaptive-group-norm
    reads it as post-normalization scale/shift. With g=None the block is
    a plain conditioned residual block.
    """

    def __init__(self, in_ch: int, out_ch: int, time_dim: int, mode: str = "none"):
        super().__init__()
        self.mode = normalize_mode(mode)
        self.norm1 = nn.GroupNorm(_num_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(_num_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        if self.mode == "concatenation":
            self.fuse = nn.Conv2d(2 * out_ch, out_ch, 1, bias=False)

    def forward(self, x, t_emb, g=None):
        if g is not None and g.shape[-2:] != x.shape[-2:]:
            raise ValueError(
                f"guidance spatial dims {tuple(g.shape[-2:])} != feature dims {tuple(x.shape[-2:])}"
            )
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(t_emb)[:, :, None, None]
        if g is not None and self.mode == "addition":
            h = h + g
        elif g is not None and self.mode == "concatenation":
            h = self.fuse(torch.cat([h, g], dim=1))
        if g is not None and self.mode == "adaptive-group-norm":
            scale, shift = g.chunk(2, dim=1)
            h = self.norm2(h) * (1.0 + scale) + shift
        else:
            h = self.norm2(h)
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


class UNet(nn.Module):
    """4-level encoder/decoder noise predictor conditioned on the blurry input.

    Channel widths are ch * (1, 2, 2, 4); two residual blocks per level;
    stride-2 convs downsample, nearest-neighbor + conv upsample. Guidance
    features enter encoder levels 1..3 through per-scale bias-free 1x1
    projection convs sized to the encoder width at that level. With
    mode="none" no projections exist and the pyramid argument is ignored.
    """

    CH_MULTS = (1, 2, 2, 4)
    BLOCKS_PER_LEVEL = 2

    def __init__(self, ch: int = 32, guidance_ch: int = 32, mode: str = "addition"):
        super().__init__()
        self.ch = ch
        self.guidance_ch = guidance_ch
        self.mode = normalize_mode(mode)
        widths = [ch * m for m in self.CH_MULTS]
        self.widths = widths
        time_dim = 4 * ch
        self.time_dim = time_dim

        self.embed_mlp = nn.Sequential(
            nn.Linear(ch, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.in_conv = nn.Conv2d(6, widths[0], 3, padding=1)

        enc_mode = self.mode
        self.enc_blocks = nn.ModuleList()
        for level, w in enumerate(widths):
            w_in = widths[0] if level == 0 else widths[level - 1]
            blocks = nn.ModuleList()
            for b in range(self.BLOCKS_PER_LEVEL):
                block_mode = enc_mode if level >= 1 else "none"
                blocks.append(
                    GuidedResBlock(w_in if b == 0 else w, w, time_dim, mode=block_mode)
                )
            self.enc_blocks.append(blocks)
        self.downs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i], 3, stride=2, padding=1) for i in range(3)
        )

        if self.mode != "none":
            proj_mult = 2 if self.mode == "adaptive-group-norm" else 1
            self.guidance_proj = nn.ModuleList(
                nn.Conv2d(guidance_ch, widths[k] * proj_mult, 1, bias=False)
                for k in (1, 2, 3)
            )

        self.mid1 = GuidedResBlock(widths[3], widths[3], time_dim)
        self.mid2 = GuidedResBlock(widths[3], widths[3], time_dim)

        self.dec_blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        w_above = widths[3]
        for level in (3, 2, 1, 0):
            w = widths[level]
            blocks = nn.ModuleList()
            blocks.append(GuidedResBlock(w_above + w, w, time_dim))
            for _ in range(self.BLOCKS_PER_LEVEL - 1):
                blocks.append(GuidedResBlock(w, w, time_dim))
            self.dec_blocks.append(blocks)
            if level > 0:
                self.ups.append(nn.Conv2d(w, w, 3, padding=1))
            w_above = w

        self.out_norm = nn.GroupNorm(_num_groups(widths[0]), widths[0])
        self.out_conv = nn.Conv2d(widths[0], 3, 3, padding=1)

    def _projected_guidance(self, pyramid: GuidancePyramid | None) -> list:
        if self.mode == "none":
            return [None, None, None]
        if pyramid is None:
            raise ValueError(f"mode {self.mode!r} requires a guidance pyramid")
        return [proj(h) for proj, h in zip(self.guidance_proj, pyramid.features)]

    def forward(
        self,
        x_t: torch.Tensor,
        y: torch.Tensor,
        pyramid: GuidancePyramid | None,
        sqrt_alpha_bar: torch.Tensor,
    ) -> torch.Tensor:
        """Predict the forward-process noise from (x_t, y, guidance, level)."""
        if x_t.shape != y.shape:
            raise ValueError(f"x_t {tuple(x_t.shape)} and y {tuple(y.shape)} must match")
        n, _, hgt, wid = x_t.shape
        if sqrt_alpha_bar.shape != (n,):
            raise ValueError("sqrt_alpha_bar must be a per-item vector")
        if self.mode != "none":
            if pyramid is None:
                raise ValueError(f"mode {self.mode!r} requires a guidance pyramid")
            for k, h in zip((1, 2, 3), pyramid.features):
                if h.shape[-2:] != (hgt // 2**k, wid // 2**k):
                    raise ValueError(
                        f"pyramid scale {k} dims {tuple(h.shape[-2:])} inconsistent "
                        f"with input {hgt}x{wid}"
                    )
        g_levels = [None] + self._projected_guidance(pyramid)

        t_emb = self.embed_mlp(noise_level_embedding(sqrt_alpha_bar, self.ch))
        h = self.in_conv(torch.cat([x_t, y], dim=1))
        skips = []
        for level in range(4):
            for block in self.enc_blocks[level]:
                h = block(h, t_emb, g=g_levels[level])
            skips.append(h)
            if level < 3:
                h = self.downs[level](h)

        h = self.mid1(h, t_emb)
        h = self.mid2(h, t_emb)

        for i, level in enumerate((3, 2, 1, 0)):
            h = torch.cat([h, skips[level]], dim=1)
            for block in self.dec_blocks[i]:
                h = block(h, t_emb)
            if level > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.ups[i](h)

        return self.out_conv(F.silu(self.out_norm(h)))


def denoising_loss(eps_hat: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Mean absolute error between predicted and true noise.

    Accumulated in float64 so the scalar is independent of batch order
    down to double-precision rounding.
    """
    if eps_hat.shape != eps.shape:
        raise ValueError(f"shape mismatch: {tuple(eps_hat.shape)} vs {tuple(eps.shape)}")
    return (eps_hat.double() - eps.double()).abs().mean()


def total_loss(l_guidance, l_denoise, lam: float):
    """Combined objective: guidance regression plus ramped denoising term."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"ramp weight must lie in [0, 1], got {lam}")
    return l_guidance + lam * l_denoise
