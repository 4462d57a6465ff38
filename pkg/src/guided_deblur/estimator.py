"""Scikit-learn style estimator facade over training and sampling.

`DiffusionDeblurrer` exposes the usual fit/predict/score surface with
get_params/set_params from sklearn's BaseEstimator, so the model drops
into pipelines and parameter searches. X is a batch of blurry RGB
images, y the matching sharp targets, both shaped (n, H, W, 3) in
[0, 1].
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import metrics
from .blur import Dataset
from .sampling import SamplerConfig, sample_average
from .training import TrainConfig, init_state, train


def check_image_batch(X, name: str = "X") -> np.ndarray:
    """Validate a (n, H, W, 3) batch of display-range images."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ValueError(f"{name}: expected (n_images, H, W, 3), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name}: need at least one image")
    h, w = arr.shape[1], arr.shape[2]
    if h < 8 or w < 8 or h % 8 or w % 8:
        raise ValueError(f"{name}: H and W must be >= 8 and divisible by 8, got {h}x{w}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


class DiffusionDeblurrer(BaseEstimator):
    """Guidance-regularized conditional diffusion deblurrer.

    fit() trains the guidance network and denoiser end to end on
    (blurry, sharp) pairs; predict() runs ancestral sampling conditioned
    on each blurry input, averaging `n_samples` chains per image.
    """

    def __init__(
        self,
        ch: int = 16,
        guidance_ch: int = 16,
        injection_mode: str = "addition",
        sigma: float = 0.05,
        schedule_kind: str = "cosine",
        iterations: int = 2000,
        batch_size: int = 8,
        base_lr: float = 5e-4,
        lr_warmup_iters: int = 100,
        ramp_iters: int = 500,
        steps: int = 100,
        max_var: float = 0.1,
        n_samples: int = 1,
        seed: int = 0,
    ):
        self.ch = ch
        self.guidance_ch = guidance_ch
        self.injection_mode = injection_mode
        self.sigma = sigma
        self.schedule_kind = schedule_kind
        self.iterations = iterations
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.lr_warmup_iters = lr_warmup_iters
        self.ramp_iters = ramp_iters
        self.steps = steps
        self.max_var = max_var
        self.n_samples = n_samples
        self.seed = seed

    def _train_config(self, crop_size: int) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            batch_size=self.batch_size,
            crop_size=crop_size,
            base_lr=self.base_lr,
            lr_warmup_iters=self.lr_warmup_iters,
            ramp_iters=self.ramp_iters,
            seed=self.seed,
            injection_mode=self.injection_mode,
            ch=self.ch,
            guidance_ch=self.guidance_ch,
            sigma=self.sigma,
            schedule_kind=self.schedule_kind,
        ).validate()

    def fit(self, X, y):
        """Train on blurry inputs X against sharp targets y; returns self."""
        X = check_image_batch(X, "X")
        y = check_image_batch(y, "y")
        if X.shape != y.shape:
            raise ValueError(f"X {X.shape} and y {y.shape} must have identical shapes")
        crop = min(X.shape[1], X.shape[2])
        pairs = [(y[i], X[i]) for i in range(X.shape[0])]
        dataset = Dataset(pairs=pairs, seed=self.seed, size=crop)
        state = init_state(self._train_config(crop))
        self.loss_records_ = train(state, dataset)
        self.state_ = state
        return self

    def predict(self, X) -> np.ndarray:
        """Deblur each image in X; returns an array shaped like X in [0, 1]."""
        if not hasattr(self, "state_"):
            raise RuntimeError("DiffusionDeblurrer is not fitted; call fit() first")
        X = check_image_batch(X, "X")
        cfg = SamplerConfig(
            steps=self.steps, max_var=self.max_var, seed=self.seed, n_samples=self.n_samples
        )
        return np.stack([sample_average(self.state_, x, cfg) for x in X])

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of predictions against sharp references."""
        y = check_image_batch(y, "y")
        preds = self.predict(X)
        return float(np.mean([metrics.psnr(p, t) for p, t in zip(preds, y)]))
