"""Pluggable no-reference quality scorers used to guide fine-tuning.

A scorer maps an NCHW batch in [0, 1] to one score per image. Its
parameters are frozen at construction; the trainer only backpropagates
*through* it.
"""

from __future__ import annotations

import importlib
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from ..errors import CapabilityError, ConfigError
from ..network import image_to_tensor, parameter_digest


class QualityScorer(nn.Module):
    tag = "scorer"
    differentiable = False
    score_range = (float("-inf"), float("inf"))

    def freeze(self):
        self.requires_grad_(False)
        self.eval()
        return self

    def score(self, image: np.ndarray) -> float:
        """Score a single HxWx3 Image."""
        with torch.no_grad():
            return float(self(image_to_tensor(np.asarray(image, dtype=np.float64)))[0])

    def digest(self) -> str:
        return parameter_digest(self)

    def require_differentiable(self):
        if not self.differentiable:
            raise CapabilityError(f"scorer {self.tag!r} is not differentiable")


class ProxyScorer(QualityScorer):
    """Differentiable stand-in for a learned NR-IQA model, scores in [0, 100].

    ``100 * sum_i w_i * tanh(x_i / s_i)`` over three smooth statistics of
    the image: luminance std (contrast), spread of the opponent chroma
    planes (colourfulness) and mean gradient magnitude (sharpness). Each
    statistic is ``sqrt(v + e^2) - e`` so it is smooth and exactly 0 on a
    constant image.
    """

    tag = "proxy"
    differentiable = True
    score_range = (0.0, 100.0)

    def __init__(self, weights=(0.4, 0.3, 0.3), scales=(0.2, 0.15, 0.05), eps: float = 1e-3):
        super().__init__()
        w = torch.as_tensor(weights, dtype=torch.float64)
        if torch.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ConfigError("proxy weights must be non-negative and sum to 1")
        self.register_buffer("weights", w)
        self.register_buffer("scales", torch.as_tensor(scales, dtype=torch.float64))
        self.register_buffer("eps", torch.tensor(eps, dtype=torch.float64))
        self.register_buffer("luma", torch.tensor([0.299, 0.587, 0.114], dtype=torch.float64))
        self.freeze()

    def _smooth_root(self, v):
        e = self.eps.to(v.dtype)
        return torch.sqrt(v + e * e) - e

    def components(self, x: torch.Tensor) -> torch.Tensor:
        """``(B, 3)`` raw statistics: contrast, colourfulness, sharpness."""
        if x.dim() == 3:
            x = x[None]
        r, g, b = x[:, 0], x[:, 1], x[:, 2]
        luma = self.luma.to(x.dtype)
        y = luma[0] * r + luma[1] * g + luma[2] * b
        flat = y.flatten(1)
        contrast = self._smooth_root(flat.var(dim=1, unbiased=False))
        rg = (r - g).flatten(1)
        yb = (0.5 * (r + g) - b).flatten(1)
        colour = self._smooth_root(rg.var(dim=1, unbiased=False) + yb.var(dim=1, unbiased=False))
        gx = y[:, :, 1:] - y[:, :, :-1]
        gy = y[:, 1:, :] - y[:, :-1, :]
        sharp = 0.5 * (self._smooth_root(gx * gx).flatten(1).mean(1) + self._smooth_root(gy * gy).flatten(1).mean(1))
        return torch.stack([contrast, colour, sharp], dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        comps = self.components(x)
        squashed = torch.tanh(comps / self.scales.to(comps.dtype))
        return 100.0 * (squashed * self.weights.to(comps.dtype)).sum(dim=1)


class ExternalScorer(QualityScorer):
    """Adapter around any callable/module mapping an NCHW batch to ``(B,)`` scores."""

    def __init__(self, fn: Callable, tag: str = "external", differentiable: bool = True, score_range=None):
        super().__init__()
        self.fn = fn
        self.tag = tag
        self.differentiable = differentiable
        if score_range is not None:
            self.score_range = tuple(score_range)
        self.freeze()

    def forward(self, x):
        return self.fn(x)


def load_external(entry: str, **kwargs) -> ExternalScorer:
    """Build a scorer from ``"package.module:factory"``.

    The factory is called with no arguments and must return either a
    ``QualityScorer`` (used as is) or a callable wrapped by `ExternalScorer`.
    """
    if ":" not in entry:
        raise ConfigError(f"external scorer entry {entry!r} must look like 'module:attr'")
    module_name, attr = entry.split(":", 1)
    try:
        factory = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot import scorer {entry!r}: {exc}") from exc
    obj = factory()
    if isinstance(obj, QualityScorer):
        return obj.freeze()
    return ExternalScorer(obj, tag=entry, **kwargs)


def make_scorer(kind: str = "proxy", entry: Optional[str] = None) -> QualityScorer:
    if kind == "proxy":
        return ProxyScorer()
    if kind == "external":
        if not entry:
            raise ConfigError("--scorer external needs scorer_entry = module:factory in the config")
        return load_external(entry)
    raise ConfigError(f"unknown scorer kind {kind!r}")
