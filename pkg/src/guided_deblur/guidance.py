"""Multiscale structure guidance: per-scale input transform, feature
extractor stacks, regression heads, and the multiscale regression loss.

The transform maps an RGB image to grayscale, block-downsamples by 2**k
for k in {1, 2, 3}, and adds a small amount of Gaussian noise. A
per-scale stack of padding-preserving residual conv blocks turns the
transformed input into guidance features; a single conv layer per scale
regresses those features back toward the transform of the sharp target.
No resampling happens inside the network, so every feature map keeps the
spatial dims of its scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import images

SCALES = (1, 2, 3)
GUIDANCE_DEPTH = 3  # residual blocks per scale stack


def phi(
    y: np.ndarray,
    k: int,
    sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Guidance transform of one RGB image at scale k.

    Returns grayscale block-downsampled by 2**k plus N(0, sigma^2) pixel
    noise, unclamped (the noise is part of the representation). With
    sigma=0 this is exactly the grayscale downsample.
    """
    gray = images.to_grayscale(y)
    down = images.downsample(gray, k)
    if sigma > 0.0:
        if rng is None:
            raise ValueError("sigma > 0 requires an rng")
        down = down + rng.normal(0.0, sigma, size=down.shape)
    return down


def pyramid_inputs(
    y: np.ndarray, sigma: float, rng: np.random.Generator | None = None
) -> list[np.ndarray]:
    """Model-range transform inputs for all three scales of one image."""
    return [images.to_model_range(phi(y, k, sigma, rng)) for k in SCALES]


def clean_targets(x: np.ndarray) -> list[np.ndarray]:
    """Noise-free model-range regression targets from a sharp image."""
    return [images.to_model_range(phi(x, k, sigma=0.0)) for k in SCALES]


@dataclass
class GuidancePyramid:
    """Per-scale transform inputs, latent features, and regression outputs.

    All tensors are NCHW; at scale k the spatial dims are 1/2**k of the
    full image, identical across phi_inputs[k-1], features[k-1], and
    regressions[k-1].
    """

    phi_inputs: list[torch.Tensor]
    features: list[torch.Tensor]
    regressions: list[torch.Tensor]

    def __post_init__(self):
        if not (len(self.phi_inputs) == len(self.features) == len(self.regressions) == 3):
            raise ValueError("pyramid must hold exactly 3 scales")
        for p, h, r in zip(self.phi_inputs, self.features, self.regressions):
            if p.shape[-2:] != h.shape[-2:] or p.shape[-2:] != r.shape[-2:]:
                raise ValueError(
                    f"scale dims disagree: phi {tuple(p.shape)}, "
                    f"features {tuple(h.shape)}, regression {tuple(r.shape)}"
                )


class _ResBlock(nn.Module):
    """conv -> SiLU -> conv with additive skip; stride 1, dims preserved."""

    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, h):
        return h + self.conv2(F.silu(self.conv1(h)))


class _ScaleStack(nn.Module):
    def __init__(self, width: int, depth: int):
        super().__init__()
        self.in_conv = nn.Conv2d(1, width, 3, padding=1)
        self.blocks = nn.ModuleList(_ResBlock(width) for _ in range(depth))
        # Regression head is a single convolution layer.
        self.head = nn.Conv2d(width, 1, 3, padding=1)

    def forward(self, phi_in):
        h = self.in_conv(phi_in)
        for block in self.blocks:
            h = block(h)
        return h, self.head(h)


class GuidanceNet(nn.Module):
    """Three independent per-scale extractor stacks with regression heads.

    No weights are shared across scales. `forward_count` tallies forward
    passes so callers can assert the pyramid is built once per sample.
    """

    def __init__(self, width: int = 32, depth: int = GUIDANCE_DEPTH):
        super().__init__()
        self.width = width
        self.depth = depth
        self.stacks = nn.ModuleList(_ScaleStack(width, depth) for _ in SCALES)
        self.forward_count = 0

    def forward(self, phi_in: list[torch.Tensor]) -> GuidancePyramid:
        if len(phi_in) != 3:
            raise ValueError(f"expected 3 scale inputs, got {len(phi_in)}")
        for coarse, fine in zip(phi_in[1:], phi_in[:-1]):
            eh, ew = fine.shape[-2] // 2, fine.shape[-1] // 2
            if coarse.shape[-2:] != (eh, ew):
                raise ValueError(
                    f"scale inputs must halve in resolution: got {tuple(fine.shape[-2:])} "
                    f"then {tuple(coarse.shape[-2:])}"
                )
        self.forward_count += 1
        features, regressions = [], []
        for stack, x in zip(self.stacks, phi_in):
            h, r = stack(x)
            features.append(h)
            regressions.append(r)
        return GuidancePyramid(list(phi_in), features, regressions)


def guidance_loss(
    pyr: GuidancePyramid,
    targets: list[torch.Tensor],
    reduction: str = "sum",
) -> tuple[list[torch.Tensor], torch.Tensor]:
    """Mean squared error per scale plus the combined scalar.

    `reduction` chooses how per-scale terms combine: "sum" (default) or
    "mean" over the three scales.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    if len(targets) != 3:
        raise ValueError(f"expected 3 scale targets, got {len(targets)}")
    per_scale = []
    for r, tgt in zip(pyr.regressions, targets):
        if r.shape != tgt.shape:
            raise ValueError(f"regression {tuple(r.shape)} vs target {tuple(tgt.shape)}")
        # float64 accumulation: scalar independent of batch order
        per_scale.append(((r.double() - tgt.double()) ** 2).mean())
    total = torch.stack(per_scale).sum()
    if reduction == "mean":
        total = total / len(per_scale)
    return per_scale, total
