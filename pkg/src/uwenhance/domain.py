"""Domain-gap diagnostics on synthetic corruptions of known clean images.

* ``domain_discrepancy``: expected squared distance between pseudo labels
  and the clean images they stand in for (per pixel by default).
* ``feature_shift``: squared distance between the mean extractor features
  of two image sets (e.g. reference-like vs non-reference-like noise).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .errors import ExtractorError, RangeError, ShapeError
from .network import image_to_tensor

NOISE_KINDS = ("gaussian", "color-cast", "haze-blend")


@dataclass(frozen=True)
class NoiseSpec:
    """A synthetic corruption.

    gaussian: ``sigma``; color-cast: additive per-channel ``cast``;
    haze-blend: ``weight`` towards an ``airlight`` colour.
    """

    kind: str
    sigma: float = 0.0
    cast: tuple = (0.0, 0.0, 0.0)
    weight: float = 0.0
    airlight: tuple = (0.1, 0.5, 0.6)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise RangeError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0 or not 0.0 <= self.weight <= 1.0:
            raise RangeError("sigma must be >= 0 and weight in [0, 1]")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "NoiseSpec":
        """``gaussian:0.05``, ``color-cast:-0.05,0.02,0.08`` or ``haze-blend:0.3``."""
        kind, _, arg = text.partition(":")
        kind = kind.strip()
        if kind == "gaussian":
            return cls(kind, sigma=float(arg), seed=seed)
        if kind == "color-cast":
            cast = tuple(float(v) for v in arg.split(","))
            if len(cast) != 3:
                raise RangeError("color-cast needs three comma-separated offsets")
            return cls(kind, cast=cast, seed=seed)
        if kind == "haze-blend":
            return cls(kind, weight=float(arg), seed=seed)
        raise RangeError(f"unknown noise kind {kind!r}")


def apply_noise(img: np.ndarray, spec: NoiseSpec, index: int = 0) -> np.ndarray:
    """Corrupt ``img``; ``index`` decorrelates the noise draws across a set."""
    x = np.asarray(img, dtype=np.float64)
    if spec.kind == "gaussian":
        rng = np.random.default_rng([spec.seed, index])
        x = x + rng.normal(0.0, spec.sigma, size=x.shape)
    elif spec.kind == "color-cast":
        x = x + np.asarray(spec.cast, dtype=np.float64)
    else:
        x = (1.0 - spec.weight) * x + spec.weight * np.asarray(spec.airlight, dtype=np.float64)
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def corrupt_set(images: Sequence[np.ndarray], spec: NoiseSpec) -> list[np.ndarray]:
    return [apply_noise(img, spec, i) for i, img in enumerate(images)]


def domain_discrepancy(pseudo: Sequence[np.ndarray], real: Sequence[np.ndarray], per_pixel: bool = True) -> float:
    """Mean over aligned pairs of the squared L2 distance (divided by 3HW when ``per_pixel``)."""
    if len(pseudo) != len(real) or not pseudo:
        raise ShapeError(f"need equal, non-empty lists (got {len(pseudo)} and {len(real)})")
    per_pair = []
    for p, r in zip(pseudo, real):
        if p.shape != r.shape:
            raise ShapeError(f"pair shapes differ: {p.shape} vs {r.shape}")
        sq = (np.asarray(p, np.float64) - np.asarray(r, np.float64)) ** 2
        per_pair.append(sq.mean() if per_pixel else sq.sum())
    return float(np.mean(per_pair))


def extract_vector(img: np.ndarray, extractor: Callable) -> np.ndarray:
    """Flatten and concatenate every feature layer of one image."""
    try:
        with torch.no_grad():
            feats = extractor(image_to_tensor(np.asarray(img, dtype=np.float32)))
    except Exception as exc:
        raise ExtractorError(f"feature extractor failed: {exc}") from exc
    return np.concatenate([f.detach().cpu().numpy().astype(np.float64).ravel() for f in feats])


@dataclass
class ShiftReport:
    delta_feat: float
    mu_r: np.ndarray
    mu_n: np.ndarray
    extractor: str
    delta_domain: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self, include_means: bool = True) -> dict:
        out = {
            "extractor": self.extractor,
            "delta_feat": self.delta_feat,
            "delta_domain": self.delta_domain,
            "feature_dim": int(self.mu_r.size),
        }
        if include_means:
            out["mu_R"] = self.mu_r.tolist()
            out["mu_N"] = self.mu_n.tolist()
        out.update(self.extra)
        return out

    def write_json(self, path, include_means: bool = True) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(include_means), indent=2, sort_keys=True) + "\n")
        return path


def feature_shift(set_r: Sequence[np.ndarray], set_n: Sequence[np.ndarray], extractor: Callable, tag: Optional[str] = None) -> ShiftReport:
    """``||mean phi(R) - mean phi(N)||^2`` for extractor ``phi``."""
    if not set_r or not set_n:
        raise ShapeError("both sets must be non-empty")
    feats_r = np.stack([extract_vector(img, extractor) for img in set_r])
    feats_n = np.stack([extract_vector(img, extractor) for img in set_n])
    if feats_r.shape[1] != feats_n.shape[1]:
        raise ShapeError("feature dimensions differ between the sets")
    mu_r, mu_n = feats_r.mean(axis=0), feats_n.mean(axis=0)
    diff = mu_r - mu_n
    tag = tag or getattr(extractor, "tag", type(extractor).__name__)
    return ShiftReport(float(diff @ diff), mu_r, mu_n, tag)


def analyze(
    clean: Sequence[np.ndarray],
    pseudo_noise: NoiseSpec,
    reference_noise: NoiseSpec,
    nonreference_noise: NoiseSpec,
    extractor: Callable,
    per_pixel: bool = True,
) -> ShiftReport:
    """Both diagnostics on corruptions of the same clean set."""
    pseudo = corrupt_set(clean, pseudo_noise)
    report = feature_shift(corrupt_set(clean, reference_noise), corrupt_set(clean, nonreference_noise), extractor)
    report.delta_domain = domain_discrepancy(pseudo, clean, per_pixel)
    report.extra = {
        "n_images": len(clean),
        "pseudo_noise": pseudo_noise.kind,
        "reference_noise": reference_noise.kind,
        "nonreference_noise": nonreference_noise.kind,
        "per_pixel": per_pixel,
    }
    return report
