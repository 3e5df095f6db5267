"""Underwater no-reference metrics: UIQM and UCIQE.

Coefficients come from the metrics' original publications:

* UIQM (Panetta, Gao & Agaian, 2016): ``c = (0.0282, 0.2953, 3.5753)``;
  UICM weights ``(-0.0268, 0.1586)``, alpha-trimming 0.1 on both tails,
  UISM channel weights are the BT.601 luma weights.
* UCIQE (Yang & Sowmya, 2015): ``c = (0.4680, 0.2745, 0.2576)``.

UIQM works on the 0-255 intensity scale so values are comparable with the
commonly reported numbers. UIConM follows the widespread plain-arithmetic
logAMEE implementation (block extrema taken over all three channels)
rather than PLIP arithmetic.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

UIQM_COEFFS = (0.0282, 0.2953, 3.5753)
UICM_MEAN_WEIGHT = -0.0268
UICM_SPREAD_WEIGHT = 0.1586
UICM_TRIM = (0.1, 0.1)
UISM_CHANNEL_WEIGHTS = (0.299, 0.587, 0.114)
UIQM_BLOCK = 8

UCIQE_COEFFS = (0.4680, 0.2745, 0.2576)
UCIQE_CONTRAST_FRACTION = 0.01

# sRGB -> XYZ (D65); white is the matrix's own row sums so neutral RGB maps to a* = b* = 0
_SRGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_WHITE = _SRGB_TO_XYZ.sum(axis=1)


def trimmed_mean(values: np.ndarray, alpha_low: float, alpha_high: float) -> float:
    """Mean after dropping ceil(aL*K) smallest and floor(aH*K) largest samples."""
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    k = x.size
    lo = int(math.ceil(alpha_low * k))
    hi = int(math.floor(alpha_high * k))
    return float(x[lo : k - hi].mean())


def uicm(img: np.ndarray) -> float:
    x = np.asarray(img, dtype=np.float64) * 255.0
    r, g, b = x[..., 0].ravel(), x[..., 1].ravel(), x[..., 2].ravel()
    rg = r - g
    yb = 0.5 * (r + g) - b
    mu_rg = trimmed_mean(rg, *UICM_TRIM)
    mu_yb = trimmed_mean(yb, *UICM_TRIM)
    var_rg = np.mean((rg - mu_rg) ** 2)
    var_yb = np.mean((yb - mu_yb) ** 2)
    return UICM_MEAN_WEIGHT * math.hypot(mu_rg, mu_yb) + UICM_SPREAD_WEIGHT * math.sqrt(var_rg + var_yb)


def _blocks(x: np.ndarray, size: int) -> np.ndarray:
    """Tile the top-left ``k2*size x k1*size`` region into ``(k2, k1, ...)`` blocks."""
    k2, k1 = x.shape[0] // size, x.shape[1] // size
    x = x[: k2 * size, : k1 * size]
    x = x.reshape(k2, size, k1, size, *x.shape[2:])
    x = np.moveaxis(x, 2, 1)
    return x.reshape(k2, k1, -1)


def eme(x: np.ndarray, size: int = UIQM_BLOCK) -> float:
    """Measure of enhancement: ``2/(k1 k2) * sum log(max/min)`` over blocks with nonzero extrema."""
    blocks = _blocks(x, size)
    hi, lo = blocks.max(axis=-1), blocks.min(axis=-1)
    ok = (hi > 0) & (lo > 0)
    total = np.sum(np.log(hi[ok] / lo[ok]))
    return float(2.0 / blocks.shape[0] / blocks.shape[1] * total)


def sobel_magnitude(channel: np.ndarray) -> np.ndarray:
    mag = np.hypot(ndimage.sobel(channel, 0), ndimage.sobel(channel, 1))
    peak = mag.max()
    return mag * (255.0 / peak) if peak > 0 else mag


def uism(img: np.ndarray, block: int = UIQM_BLOCK) -> float:
    x = np.asarray(img, dtype=np.float64) * 255.0
    total = 0.0
    for c, weight in enumerate(UISM_CHANNEL_WEIGHTS):
        channel = x[..., c]
        total += weight * eme(sobel_magnitude(channel) * channel, block)
    return total


def uiconm(img: np.ndarray, block: int = UIQM_BLOCK) -> float:
    x = np.asarray(img, dtype=np.float64) * 255.0
    blocks = _blocks(x, block)
    hi, lo = blocks.max(axis=-1), blocks.min(axis=-1)
    top, bot = hi - lo, hi + lo
    ok = (top > 0) & (bot > 0)
    ratio = top[ok] / bot[ok]
    total = np.sum(ratio * np.log(ratio))
    return float(-1.0 / blocks.shape[0] / blocks.shape[1] * total)


def uiqm(img: np.ndarray, block: int = UIQM_BLOCK) -> float:
    """Colorfulness + sharpness + contrast composite (higher is better)."""
    if min(img.shape[:2]) < block:
        raise ValueError(f"UIQM needs at least {block}x{block} pixels")
    c1, c2, c3 = UIQM_COEFFS
    return c1 * uicm(img) + c2 * uism(img, block) + c3 * uiconm(img, block)


def srgb_to_lab(img: np.ndarray) -> np.ndarray:
    """CIE L*a*b* (D65) from sRGB in [0, 1]."""
    rgb = np.asarray(img, dtype=np.float64)
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T / _WHITE
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def uciqe_components(img: np.ndarray) -> tuple[float, float, float]:
    """(chroma std, luminance contrast, mean saturation) on the 8-bit-Lab scale.

    L is divided by 100 and a, b by 255, which is what 8-bit Lab encodings
    produce after re-centering.
    """
    lab = srgb_to_lab(img)
    lum = lab[..., 0].ravel() / 100.0
    chroma = np.hypot(lab[..., 1], lab[..., 2]).ravel() / 255.0
    sigma_c = float(np.std(chroma))
    n = max(1, int(math.floor(lum.size * UCIQE_CONTRAST_FRACTION)))
    ordered = np.sort(lum)
    contrast = float(ordered[-n:].mean() - ordered[:n].mean())
    denom = np.sqrt(chroma**2 + lum**2)
    sat = np.divide(chroma, denom, out=np.zeros_like(chroma), where=denom > 0)
    return sigma_c, contrast, float(sat.mean())


def uciqe(img: np.ndarray) -> float:
    """Chroma-spread + luminance-contrast + saturation composite (higher is better)."""
    w1, w2, w3 = UCIQE_COEFFS
    sigma_c, contrast, saturation = uciqe_components(img)
    return w1 * sigma_c + w2 * contrast + w3 * saturation
