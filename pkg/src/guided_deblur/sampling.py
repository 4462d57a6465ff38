"""Ancestral reverse-process sampling conditioned on the blurry input.

Sampling starts from standard Gaussian noise, computes the guidance
pyramid once per image, and walks a discretized schedule backwards with
the standard small-variance Gaussian posterior. Sample averaging and the
(steps, max_var) grid sweep live here too.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import guidance as guidance_mod
from . import images, metrics, schedule, tensors
from .training import TrainState


class SamplingDiverged(RuntimeError):
    """Raised when the chain state goes non-finite; carries the step index."""

    def __init__(self, message, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 100
    max_var: float = 0.1
    seed: int = 0
    n_samples: int = 1
    clip_x0: bool = True

    def validate(self) -> "SamplerConfig":
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 < self.max_var < 1.0:
            raise ValueError("max_var must lie in (0, 1)")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        return self


def ancestral_step(
    x_t: torch.Tensor,
    eps_hat: torch.Tensor,
    alpha_bar_t: float,
    alpha_bar_prev: float,
    noise: torch.Tensor | None,
    clip_x0: bool = True,
) -> torch.Tensor:
    """One reverse transition x_t -> x_{t-1}.

    Inverts the forward form to estimate the clean image, optionally
    clips it to [-1, 1], and draws from the Gaussian posterior with the
    small variance choice; `noise=None` yields the deterministic mean
    (the final step).
    """
    x0 = (x_t - math.sqrt(1.0 - alpha_bar_t) * eps_hat) / math.sqrt(alpha_bar_t)
    if clip_x0:
        x0 = x0.clamp(-1.0, 1.0)
    alpha_t = alpha_bar_t / alpha_bar_prev
    beta_t = 1.0 - alpha_t
    denom = 1.0 - alpha_bar_t
    mean = (
        math.sqrt(alpha_bar_prev) * beta_t / denom * x0
        + math.sqrt(alpha_t) * (1.0 - alpha_bar_prev) / denom * x_t
    )
    if noise is None:
        return mean
    var = (1.0 - alpha_bar_prev) / denom * beta_t
    return mean + math.sqrt(max(var, 0.0)) * noise


def _sample_chain(state: TrainState, y: np.ndarray, cfg: SamplerConfig, seed: int) -> torch.Tensor:
    """Run one full reverse chain; returns the final model-range tensor."""
    y = images.check_image(y)
    gen = torch.Generator()
    gen.manual_seed(seed)
    np_rng = np.random.default_rng([seed & 0xFFFFFFFFFFFF, 0x5A])

    disc = schedule.discretize(state.sched, cfg.steps, cfg.max_var)
    y_t = tensors.image_to_tensor(images.to_model_range(y))
    with torch.no_grad():
        # Guidance pyramid: one transform draw, one forward, reused at every step.
        phi_in = [
            tensors.image_to_tensor(arr)
            for arr in guidance_mod.pyramid_inputs(y, state.config.sigma, np_rng)
        ]
        pyr = state.guidance_net(phi_in) if state.denoiser.mode != "none" else None

        # Truncated chains must start on the forward marginal the denoiser
        # was trained on; anchoring the Gaussian start at the conditioning
        # image achieves that and degenerates to pure noise as max_var -> 1.
        ab_start = float(disc.alphas[-1])
        x = math.sqrt(ab_start) * y_t + math.sqrt(1.0 - ab_start) * torch.randn(
            y_t.shape, generator=gen
        )
        for i in reversed(range(disc.steps)):
            ab_t = float(disc.alphas[i])
            ab_prev = disc.alpha_bar_prev(i)
            sqrt_ab = torch.full((1,), math.sqrt(ab_t), dtype=torch.float32)
            eps_hat = state.denoiser(x, y_t, pyr, sqrt_ab)
            noise = torch.randn(x.shape, generator=gen) if i > 0 else None
            x = ancestral_step(x, eps_hat, ab_t, ab_prev, noise, cfg.clip_x0)
            if not torch.isfinite(x).all():
                raise SamplingDiverged(f"non-finite state at step index {i}", step=i)
    return x


def sample(state: TrainState, y: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    """Deblur one image with a single reverse chain; returns a [0, 1] image."""
    cfg.validate()
    x = _sample_chain(state, y, cfg, cfg.seed)
    return images.from_model_range(tensors.tensor_to_image(x))


def sample_average(state: TrainState, y: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
    """Pixelwise mean of n_samples independent chains (sub-seeds seed^i)."""
    cfg.validate()
    acc = None
    for i in range(cfg.n_samples):
        x = _sample_chain(state, y, cfg, cfg.seed ^ i)
        acc = x if acc is None else acc + x
    return images.from_model_range(tensors.tensor_to_image(acc / cfg.n_samples))


@dataclass(frozen=True)
class SweepRecord:
    steps: int
    max_var: float
    image_id: str
    psnr: float
    ssim: float
    seconds: float


def grid_sweep(
    state: TrainState,
    dataset,
    grid: list[tuple[int, float]] | None = None,
    seed: int = 0,
    out_dir=None,
    clip_x0: bool = True,
) -> list[SweepRecord]:
    """Sample every dataset image under every grid config; one record each.

    Defaults to the 19 checked (steps, max_var) combinations. Sampled
    images are written as PNGs under out_dir/T{steps}_v{max_var}/ when
    out_dir is given.
    """
    combos = schedule.sampler_grid() if grid is None else grid
    records = []
    for steps, max_var in combos:
        sub_dir = None
        if out_dir is not None:
            sub_dir = Path(out_dir) / f"T{steps}_v{max_var:g}"
            sub_dir.mkdir(parents=True, exist_ok=True)
        for idx, (sharp, blurry) in enumerate(dataset.pairs):
            image_id = f"{idx:04d}"
            cfg = SamplerConfig(
                steps=steps,
                max_var=max_var,
                seed=seed * 1_000_003 + idx,
                clip_x0=clip_x0,
            )
            start = time.perf_counter()
            restored = sample(state, blurry, cfg)
            elapsed = time.perf_counter() - start
            records.append(
                SweepRecord(
                    steps=steps,
                    max_var=max_var,
                    image_id=image_id,
                    psnr=metrics.psnr(restored, sharp),
                    ssim=metrics.ssim(restored, sharp),
                    seconds=elapsed,
                )
            )
            if sub_dir is not None:
                images.save_image(restored, sub_dir / f"{image_id}.png")
    return records


def write_sweep_csv(records: list[SweepRecord], path) -> None:
    """Per-sample sweep records as CSV: steps,max_var,image_id,psnr,ssim,seconds."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["steps", "max_var", "image_id", "psnr", "ssim", "seconds"])
        for r in records:
            writer.writerow(
                [r.steps, f"{r.max_var:g}", r.image_id, f"{r.psnr:.6f}", f"{r.ssim:.6f}", f"{r.seconds:.4f}"]
            )
