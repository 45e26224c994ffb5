"""Full-reference image quality metrics."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import ShapeError, Tensor, no_grad
from .losses import ssim_components

PSNR_CAP = 100.0


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def psnr(pred, target, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB, capped at 100 dB."""
    a, b = _arr(pred), _arr(target)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def ssim(pred, target, peak: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a, b = _arr(pred), _arr(target)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    with no_grad():
        value, _ = ssim_components(Tensor(a), Tensor(b), peak)
    return value.item()
