"""Continuous noise schedules, forward diffusion, and sampler discretization.

A schedule maps t in [0, 1] to the cumulative signal-retention
coefficient alpha(t) in (0, 1], strictly decreasing with alpha(0) ~= 1.
Training samples t continuously; inference discretizes the schedule to T
steps whose deepest cumulative noise variance equals a chosen max_var =
1 - alpha_T.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import brentq

_COSINE_OFFSET = 0.008
# Evaluate the cosine form slightly inside its zero so alpha(1) stays positive.
_COSINE_TMAX = 0.9999
_LINVAR_DELTA = 1e-5
_LINVAR_END = 0.995  # 1 - alpha(1) for the linear-in-variance family

SCHEDULE_KINDS = ("cosine", "linear-in-variance")

# Inference-time (steps, max_var) combinations known to sample sensibly;
# all 19 are enumerated by sampler_grid().
SAMPLER_GRID: tuple[tuple[int, float], ...] = (
    (20, 0.5),
    (30, 0.5),
    (50, 0.2),
    (50, 0.5),
    (100, 0.1),
    (100, 0.2),
    (100, 0.5),
    (200, 0.05),
    (200, 0.1),
    (200, 0.2),
    (200, 0.5),
    (500, 0.02),
    (500, 0.05),
    (500, 0.1),
    (500, 0.2),
    (1000, 0.01),
    (1000, 0.02),
    (1000, 0.05),
    (1000, 0.1),
)


@dataclass(frozen=True)
class Schedule:
    """Continuous schedule: kind name plus the alpha(t) map."""

    kind: str

    def alpha(self, t):
        """Cumulative signal retention at time t (scalar or array), t in [0, 1]."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ValueError("t must lie in [0, 1]")
        if self.kind == "cosine":
            s = _COSINE_OFFSET
            u = t * _COSINE_TMAX
            f = np.cos((u + s) / (1.0 + s) * math.pi / 2.0) ** 2
            f0 = math.cos(s / (1.0 + s) * math.pi / 2.0) ** 2
            out = f / f0
        else:  # linear-in-variance
            out = 1.0 - (_LINVAR_DELTA + (_LINVAR_END - _LINVAR_DELTA) * t)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DiscreteSchedule:
    """T cumulative alphas, descending; alphas[-1] = 1 - max_var."""

    steps: int
    max_var: float
    alphas: np.ndarray  # shape (T,), descending

    def alpha_bar_prev(self, i: int) -> float:
        """Cumulative alpha one step shallower than index i (1.0 before the chain)."""
        return 1.0 if i == 0 else float(self.alphas[i - 1])


def make_schedule(kind: str) -> Schedule:
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    return Schedule(kind=kind)


def sample_t(gen: torch.Generator, n: int = 1) -> torch.Tensor:
    """Draw n diffusion times uniformly from [0, 1)."""
    return torch.rand(n, generator=gen, dtype=torch.float64)


def forward_diffuse(x, t: float, eps, sched: Schedule):
    """Noise x to level t: sqrt(alpha_t) * x + sqrt(1 - alpha_t) * eps.

    x and eps may be numpy arrays or torch tensors of identical shape;
    eps is expected to be standard normal.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if getattr(eps, "shape", None) != getattr(x, "shape", None):
        raise ValueError("eps must be shaped like x")
    a = sched.alpha(t)
    return math.sqrt(a) * x + math.sqrt(1.0 - a) * eps


def discretize(sched: Schedule, steps: int, max_var: float) -> DiscreteSchedule:
    """Restrict a schedule to [0, t*] with alpha(t*) = 1 - max_var, in T steps.

    alphas[i] = alpha((i+1)/T * t*), so alphas[-1] hits 1 - max_var
    (exactly, up to root solver tolerance) and intermediate values follow
    the parent schedule. Combinations outside the checked sampler grid
    are accepted with a warning.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0.0 < max_var < 1.0:
        raise ValueError(f"max_var must lie in (0, 1), got {max_var}")
    if (steps, max_var) not in SAMPLER_GRID:
        warnings.warn(
            f"(steps={steps}, max_var={max_var}) is outside the checked sampler grid",
            stacklevel=2,
        )
    target = 1.0 - max_var
    a0, a1 = sched.alpha(0.0), sched.alpha(1.0)
    if not a1 < target < a0:
        raise ValueError(
            f"max_var {max_var} outside schedule range ({1 - a0:.2e}, {1 - a1:.2e})"
        )
    t_star = brentq(lambda t: sched.alpha(t) - target, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
    ts = (np.arange(1, steps + 1, dtype=np.float64) / steps) * t_star
    alphas = np.asarray(sched.alpha(ts), dtype=np.float64).reshape(steps)
    alphas[-1] = target
    return DiscreteSchedule(steps=steps, max_var=max_var, alphas=alphas)


def sampler_grid() -> list[tuple[int, float]]:
    """The 19 checked (steps, max_var) inference combinations."""
    return list(SAMPLER_GRID)
