"""Batch metric evaluation and CSV reports (``image-id, metric-name, value``)."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .fullref import psnr, ssim
from .niqe import NiqeModel, niqe_score
from .scorers import QualityScorer
from .underwater import uciqe, uiqm

EVAL_SIZE = 256


def resize(img: np.ndarray, size: int = EVAL_SIZE) -> np.ndarray:
    """Bilinear resize to ``size x size`` (half-pixel centres, no antialiasing)."""
    if img.shape[:2] == (size, size):
        return np.asarray(img, dtype=np.float32)
    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32))[None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[0].numpy().transpose(1, 2, 0).clip(0.0, 1.0)


def evaluate_image(
    pred: np.ndarray,
    target: Optional[np.ndarray] = None,
    scorer: Optional[QualityScorer] = None,
    niqe_model: Optional[NiqeModel] = None,
    resize_full_reference: bool = False,
) -> dict:
    """All applicable metrics for one image.

    No-reference metrics always run on the 256x256 resize; full-reference
    metrics run at native resolution unless ``resize_full_reference``.
    """
    rows = {}
    if target is not None:
        p, t = (resize(pred), resize(target)) if resize_full_reference else (pred, target)
        rows["psnr"] = psnr(p, t)
        rows["ssim"] = ssim(p, t)
    small = resize(pred)
    rows["uiqm"] = uiqm(small)
    rows["uciqe"] = uciqe(small)
    if scorer is not None:
        rows[scorer.tag] = scorer.score(small)
    if niqe_model is not None:
        rows["niqe"] = niqe_score(niqe_model, small)
    return rows


def evaluate_many(items, workers: int = 1, **kwargs) -> list[tuple[str, dict]]:
    """``items`` is a list of ``(image_id, pred, target_or_None)``; order is preserved."""

    def one(item):
        image_id, pred, target = item
        return image_id, evaluate_image(pred, target, **kwargs)

    if workers <= 1:
        return [one(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, items))


def write_metric_csv(results, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "metric", "value"])
        for image_id, metrics in results:
            for name, value in metrics.items():
                writer.writerow([image_id, name, repr(float(value))])
    return path


def read_metric_csv(path) -> list[tuple[str, str, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [(row["image_id"], row["metric"], float(row["value"])) for row in reader]
