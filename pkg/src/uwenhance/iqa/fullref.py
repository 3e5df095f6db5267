"""Full-reference metrics on [0, 1] Images."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ..errors import ShapeError, SizeError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

# BT.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114])


def luminance(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) @ LUMA


def _check(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """PSNR in dB for data range 1, capped at 100 dB (returned for identical images)."""
    _check(pred, target)
    mse = np.mean((np.asarray(pred, np.float64) - np.asarray(target, np.float64)) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def ssim(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean SSIM on BT.601 luminance, 11x11 Gaussian window (sigma 1.5), valid region only."""
    _check(pred, target)
    if min(pred.shape[:2]) < SSIM_WINDOW:
        raise SizeError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")
    x, y = luminance(pred), luminance(target)
    g = gaussian_window()
    pad = SSIM_WINDOW // 2

    def blur(img):
        out = ndimage.correlate1d(img, g, axis=0, mode="reflect")
        out = ndimage.correlate1d(out, g, axis=1, mode="reflect")
        return out[pad:-pad, pad:-pad]

    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx * mx
    vy = blur(y * y) - my * my
    cxy = blur(x * y) - mx * my
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))
