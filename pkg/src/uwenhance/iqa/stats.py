from __future__ import annotations

import numpy as np

from ..errors import DegenerateInputError, ShapeError


def plcc(x, y) -> float:
    """Pearson linear correlation coefficient of two equal-length sequences."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise ShapeError("PLCC needs at least 3 points")
    cx, cy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(cx, cx), np.dot(cy, cy)
    if sxx == 0 or syy == 0:
        raise DegenerateInputError("PLCC undefined for a constant sequence")
    return float(np.clip(np.dot(cx, cy) / np.sqrt(sxx * syy), -1.0, 1.0))
