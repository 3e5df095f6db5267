"""NIQE: distance between an image's natural-scene statistics and a pristine model.

Feature recipe (Mittal et al.): mean-subtracted contrast-normalised (MSCN)
coefficients, a generalised Gaussian fit of the MSCN field (2 numbers) and
asymmetric generalised Gaussian fits of the four neighbour products
(4 numbers each), i.e. 18 features per scale over two scales = 36.

The score is ``sqrt(d^T ((S_model + S_image) / 2 + eps I)^-1 d)`` with
``d`` the difference of mean feature vectors. Lower means closer to the
pristine corpus; we report the raw distance and leave orientation to the
report.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage
from scipy.special import gamma as gamma_fn

from ..errors import DegenerateInputError, SizeError
from .fullref import luminance

COV_EPS = 1e-6
FEATURE_DIM = 36
SHARPNESS_FRACTION = 0.75

_ALPHAS = np.arange(0.2, 10.0, 0.001)
_GGD_RATIO = gamma_fn(1 / _ALPHAS) * gamma_fn(3 / _ALPHAS) / gamma_fn(2 / _ALPHAS) ** 2
_AGGD_RATIO = gamma_fn(2 / _ALPHAS) ** 2 / (gamma_fn(1 / _ALPHAS) * gamma_fn(3 / _ALPHAS))
_SHIFTS = ((0, 1), (1, 0), (1, 1), (1, -1))
_TINY = 1e-12


def mscn(gray: np.ndarray, sigma: float = 7.0 / 6.0, c: float = 1.0):
    """MSCN coefficients and the local std map for a 0-255 grayscale image."""
    # 7x7 Gaussian window
    truncate = 3.0 / sigma
    mu = ndimage.gaussian_filter(gray, sigma, truncate=truncate, mode="nearest")
    var = ndimage.gaussian_filter(gray * gray, sigma, truncate=truncate, mode="nearest") - mu * mu
    sd = np.sqrt(np.abs(var))
    return (gray - mu) / (sd + c), sd


def fit_ggd(x: np.ndarray) -> tuple[float, float]:
    x = x.ravel()
    sigma_sq = float(np.mean(x * x))
    e_abs = float(np.mean(np.abs(x)))
    if e_abs < _TINY:
        return 0.0, 0.0
    rho = sigma_sq / e_abs**2
    return float(_ALPHAS[np.argmin(np.abs(rho - _GGD_RATIO))]), sigma_sq


def fit_aggd(x: np.ndarray) -> tuple[float, float, float, float]:
    x = x.ravel()
    left, right = x[x < 0], x[x > 0]
    if left.size == 0 or right.size == 0:
        return 0.0, 0.0, 0.0, 0.0
    lsigma = float(np.sqrt(np.mean(left * left)))
    rsigma = float(np.sqrt(np.mean(right * right)))
    ghat = lsigma / rsigma
    rhat = float(np.mean(np.abs(x)) ** 2 / np.mean(x * x))
    rhat_norm = rhat * (ghat**3 + 1) * (ghat + 1) / (ghat**2 + 1) ** 2
    alpha = float(_ALPHAS[np.argmin(np.abs(_AGGD_RATIO - rhat_norm))])
    mean = (rsigma - lsigma) * gamma_fn(2 / alpha) / gamma_fn(1 / alpha) * np.sqrt(
        gamma_fn(1 / alpha) / gamma_fn(3 / alpha)
    )
    return alpha, float(mean), lsigma**2, rsigma**2


def patch_features(m: np.ndarray) -> np.ndarray:
    """18 features of one MSCN patch."""
    feats = list(fit_ggd(m))
    for dy, dx in _SHIFTS:
        shifted = np.roll(m, shift=(-dy, -dx), axis=(0, 1))
        feats.extend(fit_aggd(m * shifted))
    return np.asarray(feats)


def _scale_features(gray: np.ndarray, patch: int):
    m, sd = mscn(gray)
    rows, cols = gray.shape[0] // patch, gray.shape[1] // patch
    feats, sharp = [], []
    for i in range(rows):
        for j in range(cols):
            window = np.s_[i * patch : (i + 1) * patch, j * patch : (j + 1) * patch]
            feats.append(patch_features(m[window]))
            sharp.append(sd[window].mean())
    return np.asarray(feats), np.asarray(sharp)


def image_features(img: np.ndarray, patch: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch 36-d features and per-patch sharpness for an Image."""
    gray = luminance(img) * 255.0
    if np.ptp(gray) == 0:
        raise DegenerateInputError("NIQE statistics undefined for a constant image")
    h, w = (gray.shape[0] // patch) * patch, (gray.shape[1] // patch) * patch
    if h == 0 or w == 0:
        raise SizeError(f"image {gray.shape} smaller than one {patch}x{patch} patch")
    gray = gray[:h, :w]
    f1, sharp = _scale_features(gray, patch)
    half = cv2.resize(gray, (w // 2, h // 2), interpolation=cv2.INTER_CUBIC)
    f2, _ = _scale_features(half, patch // 2)
    return np.hstack([f1, f2]), sharp


@dataclass(frozen=True)
class NiqeModel:
    mean: np.ndarray
    cov: np.ndarray
    patch_size: int
    feature_dim: int = FEATURE_DIM


def niqe_fit(corpus, patch_size: int = 32) -> NiqeModel:
    """Fit the pristine multivariate Gaussian on sharp patches of a corpus."""
    corpus = list(corpus)
    if len(corpus) < 10:
        raise SizeError("NIQE fit needs at least 10 images")
    selected = []
    for img in corpus:
        feats, sharp = image_features(img, patch_size)
        keep = sharp > SHARPNESS_FRACTION * sharp.max()
        if not keep.any():
            keep = sharp >= sharp.max()
        selected.append(feats[keep])
    feats = np.vstack(selected)
    cov = np.cov(feats, rowvar=False)
    return NiqeModel(feats.mean(axis=0), (cov + cov.T) / 2, patch_size)


def niqe_score(model: NiqeModel, img: np.ndarray) -> float:
    feats, _ = image_features(img, model.patch_size)
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False) if feats.shape[0] > 1 else np.zeros_like(model.cov)
    pooled = (model.cov + cov) / 2 + COV_EPS * np.eye(model.feature_dim)
    d = model.mean - mu
    return float(np.sqrt(max(0.0, d @ np.linalg.solve(pooled, d))))
