"""Image quality metrics and quality scorers."""

from .fullref import PSNR_CAP, luminance, psnr, ssim
from .niqe import NiqeModel, niqe_fit, niqe_score
from .scorers import ExternalScorer, ProxyScorer, QualityScorer, load_external, make_scorer
from .stats import plcc
from .underwater import uciqe, uiqm

__all__ = [
    "PSNR_CAP",
    "ExternalScorer",
    "NiqeModel",
    "ProxyScorer",
    "QualityScorer",
    "load_external",
    "luminance",
    "make_scorer",
    "niqe_fit",
    "niqe_score",
    "plcc",
    "psnr",
    "ssim",
    "uciqe",
    "uiqm",
]
