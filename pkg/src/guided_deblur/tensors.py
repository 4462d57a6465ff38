"""Conversions between (H, W, C) numpy images and NCHW torch tensors."""

from __future__ import annotations

import numpy as np
import torch


def image_to_tensor(arr: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, C) array -> (1, C, H, W) tensor."""
    t = torch.from_numpy(np.ascontiguousarray(np.transpose(arr, (2, 0, 1))))
    return t.unsqueeze(0).to(dtype)


def batch_to_tensor(arrs: list[np.ndarray], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """List of (H, W, C) arrays -> (N, C, H, W) tensor."""
    return torch.cat([image_to_tensor(a, dtype) for a in arrs], dim=0)


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(C, H, W) or (1, C, H, W) tensor -> (H, W, C) float64 array."""
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {t.shape[0]}")
        t = t[0]
    return np.transpose(t.detach().cpu().to(torch.float64).numpy(), (1, 2, 0))
