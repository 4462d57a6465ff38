"""Image arrays, value-range conversions, and lossless PNG I/O.

Images are float64 numpy arrays of shape (H, W, C) with C in {1, 3} and
intensities in display range [0, 1]. Model-range arrays live in [-1, 1]
and are produced/consumed by the explicit affine pair
:func:`to_model_range` / :func:`from_model_range`. Height and width must
be at least 8 and divisible by 8 so that every 2**k downsample for
k <= 3 is exact.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as _PILImage

# Rec. 601 luma weights; fixed for determinism across platforms.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


class ImageError(ValueError):
    """Raised when an array violates the image contract or a file is unsupported."""


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate an (H, W, C) display-range image array and return it as float64.

    Enforces: 3-D shape, C in {1, 3}, H and W >= 8 and divisible by 8,
    all values finite. Values are not required to lie inside [0, 1];
    that is only the display convention.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ImageError(f"{name}: expected (H, W, C) array, got shape {arr.shape}")
    h, w, c = arr.shape
    if c not in (1, 3):
        raise ImageError(f"{name}: channels must be 1 or 3, got {c}")
    if h < 8 or w < 8 or h % 8 != 0 or w % 8 != 0:
        raise ImageError(
            f"{name}: height and width must be >= 8 and divisible by 8, got {h}x{w}"
        )
    if not np.all(np.isfinite(arr)):
        raise ImageError(f"{name}: contains non-finite values")
    return arr


def load_image(path) -> np.ndarray:
    """Load an 8-bit grayscale or RGB PNG as a float64 array in [0, 1].

    Intensities are byte/255 exactly. Raises ImageError for missing files,
    non-PNG input, unsupported modes (palette, alpha, 16-bit), or
    dimensions that are not divisible by 8.
    """
    try:
        pil = _PILImage.open(path)
    except FileNotFoundError:
        raise ImageError(f"no such file: {path}") from None
    except _PILImage.UnidentifiedImageError:
        raise ImageError(f"not a readable image: {path}") from None
    with pil:
        if pil.format != "PNG":
            raise ImageError(f"{path}: expected PNG, got {pil.format}")
        if pil.mode not in ("L", "RGB"):
            raise ImageError(
                f"{path}: unsupported mode {pil.mode}; only 8-bit grayscale (L) or RGB"
            )
        data = np.asarray(pil, dtype=np.uint8)
    if data.ndim == 2:
        data = data[:, :, None]
    arr = data.astype(np.float64) / 255.0
    return check_image(arr, name=str(path))


def save_image(img: np.ndarray, path) -> None:
    """Write an image as 8-bit PNG; quantization is round-half-up on v*255.

    Round trip load(save(img)) equals round(img*255)/255 elementwise for
    inputs in [0, 1].
    """
    arr = check_image(img)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ImageError("save_image requires values in [0, 1]")
    quantized = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    if quantized.shape[2] == 1:
        pil = _PILImage.fromarray(quantized[:, :, 0], mode="L")
    else:
        pil = _PILImage.fromarray(quantized, mode="RGB")
    pil.save(path, format="PNG")


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Convert an RGB image to 1-channel luma (Rec. 601 weights)."""
    arr = check_image(img)
    if arr.shape[2] != 3:
        raise ImageError(f"to_grayscale expects 3 channels, got {arr.shape[2]}")
    luma = arr @ LUMA_WEIGHTS
    return luma[:, :, None]


def downsample(img: np.ndarray, k: int) -> np.ndarray:
    """Reduce resolution by 2**k via exact block-average pooling.

    Each output pixel is the arithmetic mean of its 2**k x 2**k input
    block. Requires height and width divisible by 2**k.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ImageError(f"downsample expects (H, W, C), got shape {arr.shape}")
    if not 1 <= k <= 3:
        raise ImageError(f"scale index k must be in 1..3, got {k}")
    h, w, c = arr.shape
    f = 2**k
    if h % f != 0 or w % f != 0:
        raise ImageError(f"dimensions {h}x{w} not divisible by 2**{k}")
    blocks = arr.reshape(h // f, f, w // f, f, c)
    return blocks.mean(axis=(1, 3))


def to_model_range(img: np.ndarray) -> np.ndarray:
    """Affine map [0, 1] -> [-1, 1]: v -> 2v - 1."""
    return 2.0 * np.asarray(img, dtype=np.float64) - 1.0


def from_model_range(m: np.ndarray) -> np.ndarray:
    """Inverse affine map [-1, 1] -> [0, 1], clamping overshoot into [0, 1]."""
    return np.clip((np.asarray(m, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)
