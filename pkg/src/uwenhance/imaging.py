"""Image containers, file I/O, manifests and the pixel-level transforms.

An *Image* throughout the package is a ``float32`` numpy array of shape
``(H, W, 3)`` in RGB order with every value in ``[0, 1]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import cv2
import numpy as np
from PIL import Image as PILImage

from .errors import AlignmentError, FormatError, LoadError, RangeError, ShapeError

SOURCE_TAGS = ("reference", "non-reference")


def as_image(pixels, min_size: int = 1) -> np.ndarray:
    """Validate ``pixels`` as an Image and return it as float32."""
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected an HxWx3 array, got shape {arr.shape}")
    if arr.shape[0] < min_size or arr.shape[1] < min_size:
        raise ShapeError(f"image {arr.shape[:2]} smaller than {min_size}x{min_size}")
    if not np.all(np.isfinite(arr)):
        raise RangeError("image contains NaN or Inf")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise RangeError("image values must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class ImagePair:
    input: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise ShapeError(f"pair shapes differ: {self.input.shape} vs {self.target.shape}")

    @property
    def shape(self):
        return self.input.shape


def load_image(path) -> np.ndarray:
    """Decode an 8- or 16-bit RGB raster into an Image."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"no such image: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"cannot decode {path}")
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise FormatError(f"{path} is not a 3-channel RGB raster (shape {raw.shape})")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"unsupported bit depth {raw.dtype} in {path}")
    rgb = raw[:, :, ::-1]
    return np.ascontiguousarray(rgb.astype(np.float64) / scale, dtype=np.float32)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(image: np.ndarray, path) -> Path:
    """Write an Image as an 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(as_image(image))).save(path, format="PNG")
    return path


def linear_mix(clean: np.ndarray, degraded: np.ndarray, t: float) -> np.ndarray:
    """Return ``(1 - t) * clean + t * degraded``."""
    if clean.shape != degraded.shape:
        raise ShapeError(f"cannot mix {clean.shape} with {degraded.shape}")
    if not 0.0 <= t <= 1.0:
        raise RangeError(f"mixing ratio {t} outside [0, 1]")
    if t == 0.0:
        return np.array(clean, dtype=np.float32)
    if t == 1.0:
        return np.array(degraded, dtype=np.float32)
    mixed = (1.0 - t) * clean.astype(np.float64) + t * degraded.astype(np.float64)
    return np.clip(mixed, 0.0, 1.0).astype(np.float32)


def flip(image: np.ndarray, horizontal: bool, vertical: bool) -> np.ndarray:
    if horizontal:
        image = image[:, ::-1]
    if vertical:
        image = image[::-1]
    return np.ascontiguousarray(image)


def augment_flip(pair: ImagePair, horizontal: bool, vertical: bool) -> ImagePair:
    return ImagePair(flip(pair.input, horizontal, vertical), flip(pair.target, horizontal, vertical))


def random_flip(pair: ImagePair, rng: np.random.Generator) -> ImagePair:
    """Flip each axis independently with probability 1/2 (sampled per image)."""
    horizontal, vertical = rng.integers(0, 2, size=2).astype(bool)
    return augment_flip(pair, bool(horizontal), bool(vertical))


def patch_corner(height: int, width: int, size: int, rng: np.random.Generator) -> tuple[int, int]:
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    return top, left


def extract_patch(pair: ImagePair, size: int, seed, factor: int = 8) -> ImagePair:
    """Cut the same ``size``x``size`` window from both images.

    ``factor`` is the network's total downsampling factor; ``size`` must be a
    multiple of it. Corners are uniform on the 1-pixel grid.
    """
    height, width = pair.shape[:2]
    if size <= 0 or size > min(height, width):
        raise RangeError(f"patch size {size} does not fit a {height}x{width} image")
    if size % factor:
        raise AlignmentError(f"patch size {size} not divisible by {factor}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    top, left = patch_corner(height, width, size, rng)
    window = np.s_[top : top + size, left : left + size]
    return ImagePair(
        np.ascontiguousarray(pair.input[window]), np.ascontiguousarray(pair.target[window])
    )


@dataclass
class ManifestEntry:
    input: Path
    target: Optional[Path]
    source: str


@dataclass
class DatasetManifest:
    """Tab-separated list of ``input  target-or-'-'  source-tag`` records."""

    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise LoadError(f"no such manifest: {path}")
        root = path.parent
        entries = []
        with path.open(newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
                if not row or row[0].startswith("#"):
                    continue
                if len(row) != 3:
                    raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
                inp, tgt, tag = (col.strip() for col in row)
                if tag not in SOURCE_TAGS:
                    raise FormatError(f"{path}:{lineno}: unknown source tag {tag!r}")
                entries.append(
                    ManifestEntry(root / inp, None if tgt == "-" else root / tgt, tag)
                )
        manifest = cls(entries, root)
        manifest.check_paths()
        return manifest

    def check_paths(self):
        for entry in self.entries:
            for p in (entry.input, entry.target):
                if p is not None and not p.is_file():
                    raise LoadError(f"manifest references missing file {p}")

    def write(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            for e in self.entries:
                tgt = "-" if e.target is None else _relative(e.target, path.parent)
                writer.writerow([_relative(e.input, path.parent), tgt, e.source])
        return path

    def load_pairs(self) -> list[ImagePair]:
        missing = [e.input for e in self.entries if e.target is None]
        if missing:
            raise FormatError(f"entries without targets cannot form pairs: {missing[0]}")
        return [ImagePair(load_image(e.input), load_image(e.target)) for e in self.entries]

    def load_inputs(self) -> list[np.ndarray]:
        return [load_image(e.input) for e in self.entries]


def _relative(p: Path, base: Path) -> str:
    try:
        return str(Path(p).resolve().relative_to(base.resolve()))
    except ValueError:
        return str(Path(p).resolve())
