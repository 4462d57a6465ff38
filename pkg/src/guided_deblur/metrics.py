"""Distortion metrics (PSNR, windowed SSIM) and sweep aggregation/plots."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import images

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = images.check_image(a, "a")
    b = images.check_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    for name, arr in (("a", a), ("b", b)):
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"{name}: metric inputs must lie in [0, 1]")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on unit range, capped at 100 dB.

    Identical images report the documented 100 dB cap rather than
    infinity so results stay finite and sortable.
    """
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window() -> np.ndarray:
    offsets = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * SSIM_SIGMA**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with the canonical 11x11 Gaussian window.

    RGB inputs are converted to luma internally; the score is the mean
    over all fully-contained window positions.
    """
    a, b = _check_pair(a, b)
    if a.shape[2] == 3:
        a = images.to_grayscale(a)
        b = images.to_grayscale(b)
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _gaussian_window()
    wa = sliding_window_view(a[:, :, 0], (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(b[:, :, 0], (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = np.einsum("ijkl,kl->ij", wa, win)
    mu_b = np.einsum("ijkl,kl->ij", wb, win)
    var_a = np.einsum("ijkl,kl->ij", wa * wa, win) - mu_a**2
    var_b = np.einsum("ijkl,kl->ij", wb * wb, win) - mu_b**2
    cov = np.einsum("ijkl,kl->ij", wa * wb, win) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-image distortion scores for one sampler configuration."""

    steps: int
    max_var: float
    image_ids: list[str]
    psnr_values: list[float]
    ssim_values: list[float]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))

    @property
    def n_images(self) -> int:
        return len(self.image_ids)


def sweep_report(records, out_dir) -> list[MetricReport]:
    """Aggregate sweep records per config; write summary CSV and a PSNR plot.

    Emits out_dir/sweep_summary.csv with one row per (steps, max_var) and
    out_dir/sweep_plot.png showing mean PSNR across the grid.
    """
    if not records:
        raise ValueError("sweep_report requires at least one record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    grouped: dict[tuple[int, float], list] = {}
    for r in records:
        grouped.setdefault((r.steps, r.max_var), []).append(r)
    reports = []
    for (steps, max_var), group in sorted(grouped.items()):
        reports.append(
            MetricReport(
                steps=steps,
                max_var=max_var,
                image_ids=[g.image_id for g in group],
                psnr_values=[g.psnr for g in group],
                ssim_values=[g.ssim for g in group],
            )
        )

    with open(out / "sweep_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["steps", "max_var", "mean_psnr", "mean_ssim", "n_images"])
        for rep in reports:
            writer.writerow(
                [
                    rep.steps,
                    f"{rep.max_var:g}",
                    f"{rep.mean_psnr:.6f}",
                    f"{rep.mean_ssim:.6f}",
                    rep.n_images,
                ]
            )

    _plot_sweep(reports, out / "sweep_plot.png")
    return reports


def _plot_sweep(reports: list[MetricReport], path) -> None:
    from matplotlib.figure import Figure

    fig = Figure(figsize=(7, 4.5))
    ax = fig.subplots()
    by_var: dict[float, list[MetricReport]] = {}
    for rep in reports:
        by_var.setdefault(rep.max_var, []).append(rep)
    for max_var, group in sorted(by_var.items()):
        group = sorted(group, key=lambda r: r.steps)
        ax.plot(
            [r.steps for r in group],
            [r.mean_psnr for r in group],
            marker="o",
            label=f"max_var={max_var:g}",
        )
    ax.set_xscale("log")
    ax.set_xlabel("sampling steps")
    ax.set_ylabel("mean PSNR (dB)")
    ax.set_title("Distortion across sampler settings")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
