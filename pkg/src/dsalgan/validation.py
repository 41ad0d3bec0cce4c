"""Input checks for image and mask batches, in the spirit of ``sklearn.utils.check_array``."""

from __future__ import annotations

import numpy as np


def check_images(X, name: str = "X", multiple_of: int = 16, square: bool = True) -> np.ndarray:
    """Validate an ``(N, H, W, 3)`` batch with values in [0, 1]; uint8 input is rescaled."""
    X = np.asarray(X)
    if X.dtype == np.uint8:
        X = X.astype(np.float32) / 255.0
    else:
        X = X.astype(np.float32, copy=False)
    if X.ndim == 3 and X.shape[-1] == 3:
        raise ValueError(f"{name} looks like a single image of shape {X.shape}; pass a batch (N, H, W, 3)")
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (N, H, W, 3), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinite values")
    if X.min() < 0 or X.max() > 1:
        raise ValueError(f"{name} values must lie in [0, 1]")
    h, w = X.shape[1:3]
    if square and h != w:
        raise ValueError(f"{name} images must be square, got {h}x{w}")
    if multiple_of and (h % multiple_of or w % multiple_of):
        raise ValueError(f"{name} sides must be multiples of {multiple_of}, got {h}x{w}")
    return X


def check_masks(y, n: int | None = None, size: tuple[int, int] | None = None, threshold: float = 0.5) -> np.ndarray:
    """Validate ``(N, H, W)`` (or ``(N, H, W, 1)``) masks and binarize them at ``threshold``."""
    y = np.asarray(y)
    if y.dtype == np.uint8:
        y = y.astype(np.float32) / 255.0
    if y.ndim == 4 and y.shape[-1] == 1:
        y = y[..., 0]
    if y.ndim != 3:
        raise ValueError(f"masks must have shape (N, H, W), got {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} masks for {n} images")
    if size is not None and y.shape[1:] != tuple(size):
        raise ValueError(f"mask size {y.shape[1:]} does not match image size {tuple(size)}")
    if not np.all(np.isfinite(y)):
        raise ValueError("masks contain NaN or infinite values")
    return (y >= threshold).astype(np.float32)
