"""Training objectives: pixel, Pearson-correlation, perceptual and the
quality-guided fine-tuning total.

Every loss takes NCHW tensors (a bare HxWx3 numpy Image is accepted and
treated as a batch of one) and returns a 0-d tensor that supports autograd.
Batch terms are averaged over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DegenerateInputError, ExtractorError, RangeError, ShapeError

# std below this is treated as a constant image
_DEGENERATE_STD = 1e-8


def _batch(x) -> torch.Tensor:
    if isinstance(x, np.ndarray):
        if x.ndim != 3:
            raise ShapeError(f"expected an HxWx3 image, got {x.shape}")
        return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))[None]
    if x.dim() == 3:
        return x[None]
    return x


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def pixel_loss(pred, target) -> torch.Tensor:
    """Mean absolute error over every component."""
    pred, target = _batch(pred), _batch(target)
    _check_shapes(pred, target)
    return (pred - target).abs().mean()


def pearson_corr(a, b) -> torch.Tensor:
    """Per-image Pearson correlation over all 3HW components, population stats.

    Returns shape ``(B,)``; a single Image gives a one-element tensor.
    """
    a, b = _batch(a), _batch(b)
    _check_shapes(a, b)
    a = a.reshape(a.shape[0], -1)
    b = b.reshape(b.shape[0], -1)
    ca = a - a.mean(dim=1, keepdim=True)
    cb = b - b.mean(dim=1, keepdim=True)
    sa = ca.pow(2).mean(dim=1).sqrt()
    sb = cb.pow(2).mean(dim=1).sqrt()
    if bool((sa.detach() < _DEGENERATE_STD).any() or (sb.detach() < _DEGENERATE_STD).any()):
        raise DegenerateInputError("Pearson correlation undefined for a constant image")
    rho = (ca * cb).mean(dim=1) / (sa * sb)
    return rho.clamp(-1.0, 1.0)


def pearson_loss(pred, target) -> torch.Tensor:
    """``(1 - rho) / 2`` averaged over the batch; 0 for perfect alignment."""
    return ((1.0 - pearson_corr(pred, target)) / 2.0).mean()


class IdentityExtractor(nn.Module):
    tag = "identity"

    def forward(self, x):
        return [x]


class RandomConvPyramid(nn.Module):
    """Frozen fixed-seed convolutional pyramid used as the desk perceptual network.

    Three stride-2 3x3 conv stages with GELU; each stage output is one
    feature layer.
    """

    tag = "random-pyramid"

    def __init__(self, widths: Sequence[int] = (8, 16, 32), seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers, c_in = [], 3
        for c_out in widths:
            conv = nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1)
            bound = 1.0 / math.sqrt(c_in * 9)
            with torch.no_grad():
                conv.weight.uniform_(-bound, bound, generator=gen)
                conv.bias.uniform_(-bound, bound, generator=gen)
            layers.append(conv)
            c_in = c_out
        self.stages = nn.ModuleList(layers)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        feats = []
        for conv in self.stages:
            x = F.gelu(conv(x))
            feats.append(x)
        return feats


class VGGExtractor(nn.Module):
    """ImageNet VGG-19 features up to relu1_2/relu2_2/relu3_4 (optional, needs weights)."""

    tag = "vgg19"
    _cuts = (4, 9, 18)

    def __init__(self, weights="DEFAULT"):
        super().__init__()
        from torchvision.models import vgg19

        features = vgg19(weights=weights).features[: self._cuts[-1]]
        self.features = features
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        feats = []
        for i, layer in enumerate(self.features, start=1):
            x = layer(x)
            if i in self._cuts:
                feats.append(x)
        return feats


def perceptual_loss(pred, target, extractor: Callable) -> torch.Tensor:
    """Mean absolute feature difference, averaged over the extractor's layers."""
    pred, target = _batch(pred), _batch(target)
    _check_shapes(pred, target)
    try:
        fp = extractor(pred)
        with torch.no_grad():
            ft = extractor(target)
    except Exception as exc:
        raise ExtractorError(f"feature extractor failed: {exc}") from exc
    if len(fp) == 0 or len(fp) != len(ft):
        raise ExtractorError("extractor returned inconsistent layer lists")
    return torch.stack([(a - b).abs().mean() for a, b in zip(fp, ft)]).mean()


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.003

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise RangeError(f"{name} must be finite and >= 0, got {value}")


@dataclass
class LossBreakdown:
    """Components of the fine-tuning objective.

    ``score`` is the batch-mean gap ``Q(pred) - Q_reference``; it is exactly
    0 when the score term is disabled (``lambda3 == 0``).
    """

    pixel: torch.Tensor
    perceptual: torch.Tensor
    score: torch.Tensor
    total: torch.Tensor
    weights: LossWeights

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("pixel", "perceptual", "score", "total")}

    def reconstruct(self) -> float:
        w, f = self.weights, self.as_floats()
        return w.lambda1 * f["pixel"] + w.lambda2 * f["perceptual"] - w.lambda3 * f["score"]


def total_loss(pred, pseudo, q_pred, q_ref, weights: LossWeights, extractor: Callable) -> LossBreakdown:
    """``l1 * L_pix + l2 * L_perc - l3 * mean(Q(pred) - Q_ref)``.

    ``q_ref`` is detached: it shifts the score term but carries no gradient.
    """
    pix = pixel_loss(pred, pseudo)
    perc = perceptual_loss(pred, pseudo, extractor)
    if weights.lambda3 == 0:
        score = torch.zeros((), dtype=pix.dtype)
    else:
        q_pred = torch.as_tensor(q_pred, dtype=pix.dtype)
        q_ref = torch.as_tensor(q_ref, dtype=pix.dtype).detach()
        score = (q_pred - q_ref).mean()
    total = weights.lambda1 * pix + weights.lambda2 * perc - weights.lambda3 * score
    return LossBreakdown(pix, perc, score, total, weights)


def make_extractor(name: str = "random-pyramid") -> nn.Module:
    """``identity``, ``random-pyramid`` (desk default) or ``vgg19``."""
    if name == "identity":
        return IdentityExtractor()
    if name == "random-pyramid":
        return RandomConvPyramid()
    if name == "vgg19":
        try:
            return VGGExtractor()
        except Exception as exc:
            raise ExtractorError(f"VGG-19 weights unavailable: {exc}") from exc
    raise ExtractorError(f"unknown extractor {name!r}")
