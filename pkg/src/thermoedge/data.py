"""Grayscale datasets: PGM loading, synthetic generation, splitting,
augmentation and frame preprocessing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    InsufficientSamplesError,
    MaxvalError,
    NoClassDirsError,
    NotPGMError,
)

DEFAULT_CLASS_NAMES = (
    "healthy", "blight", "spot", "mosaic", "chlorosis", "necrosis", "mixed",
)
NOISE_SIGMA = 8.0


@dataclass
class Sample:
    image: np.ndarray  # (H, W) uint8
    label: int


@dataclass
class Dataset:
    samples: List[Sample]
    class_names: List[str] = field(default_factory=lambda: list(DEFAULT_CLASS_NAMES))

    def __post_init__(self):
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class names must be unique")
        k = len(self.class_names)
        for s in self.samples:
            if not 0 <= s.label < k:
                raise ValueError(f"label {s.label} outside 0..{k - 1}")

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def __len__(self):
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], list(self.class_names))


# --------------------------------------------------------------------- PGM

def read_pgm(path) -> np.ndarray:
    """Parse a binary (P5) 8-bit PGM file."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise NotPGMError(f"{path}: not a binary PGM (magic {data[:2]!r})")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise NotPGMError(f"{path}: malformed PGM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace before raster
    width, height, maxval = fields
    if maxval != 255:
        raise MaxvalError(f"{path}: maxval {maxval} != 255")
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise NotPGMError(f"{path}: raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())


def load_dataset_dir(path) -> Dataset:
    """Load ``<root>/<class>/*.pgm``; classes are the sorted subdirectory names."""
    root = Path(path)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not classes:
        raise NoClassDirsError(f"{root}: no class subdirectories")
    samples = []
    for label, name in enumerate(classes):
        for f in sorted((root / name).iterdir()):
            if f.is_file():
                samples.append(Sample(read_pgm(f), label))
    return Dataset(samples, classes)


def save_dataset_dir(ds: Dataset, path) -> None:
    root = Path(path)
    counters = {}
    for s in ds.samples:
        name = ds.class_names[s.label]
        (root / name).mkdir(parents=True, exist_ok=True)
        i = counters.get(name, 0)
        counters[name] = i + 1
        write_pgm(root / name / f"{i:05d}.pgm", s.image)


# --------------------------------------------------------------- synthetic

def _blobs(rng, yy, xx, count, rmin, rmax):
    field_ = np.zeros_like(yy)
    for _ in range(count):
        cy, cx = rng.uniform(-0.7, 0.7, size=2)
        r = rng.uniform(rmin, rmax)
        field_ = np.maximum(field_, np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)))
    return field_


def _border_band(rng, yy, xx):
    width = rng.uniform(0.25, 0.4)
    edge = 1.0 - np.maximum(np.abs(yy), np.abs(xx))
    return np.clip((width - edge) / 0.08, 0.0, 1.0)


def _motif(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    cy, cx = rng.uniform(-0.2, 0.2, size=2)
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    img = rng.uniform(130, 150) - 60.0 * r
    if label == 1 or label == 6:  # blight: dark margins
        img = img * (1.0 - 0.85 * _border_band(rng, yy, xx))
    if label == 2 or label == 6:  # spot: bright blobs
        img = img + 120.0 * _blobs(rng, yy, xx, int(rng.integers(3, 9)), 0.08, 0.14)
    if label == 3:  # mosaic patchwork
        cells = rng.uniform(30, 230, size=(4, 4))
        idx = np.minimum((np.arange(size) * 4) // size, 3)
        img = 0.25 * img + 0.75 * cells[idx][:, idx]
    if label == 4:  # chlorosis: brightened half-plane
        theta = rng.uniform(0, 2 * np.pi)
        side = (np.cos(theta) * xx + np.sin(theta) * yy) > rng.uniform(-0.2, 0.2)
        img = img + 110.0 * side
    if label == 5:  # necrosis: dark irregular patch
        cy, cx = rng.uniform(-0.4, 0.4, size=2)
        patch = np.zeros_like(yy, dtype=bool)
        for _ in range(int(rng.integers(3, 6))):
            oy, ox = rng.normal(0, 0.15, size=2)
            rad = rng.uniform(0.15, 0.3)
            patch |= (yy - cy - oy) ** 2 + (xx - cx - ox) ** 2 < rad * rad
        img = np.where(patch, rng.uniform(10, 40), img)
    return img


def generate_synthetic(n_per_class: int, size: int = 32, seed: int = 0,
                       class_count: int = 7) -> Dataset:
    """Procedural thermal-style leaf images, ``n_per_class`` of each class."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if size < 16:
        raise ValueError("size must be >= 16")
    if class_count != len(DEFAULT_CLASS_NAMES):
        raise ValueError("the synthetic generator defines exactly 7 classes")
    rng = np.random.default_rng(seed)
    samples = []
    for label in range(class_count):
        for _ in range(n_per_class):
            img = _motif(label, size, rng) + rng.normal(0.0, NOISE_SIGMA, size=(size, size))
            samples.append(Sample(np.clip(np.rint(img), 0, 255).astype(np.uint8), label))
    return Dataset(samples, list(DEFAULT_CLASS_NAMES))


# ------------------------------------------------------------------- split

def _allocate(n: int, fractions: Sequence[float]) -> List[int]:
    """Largest-remainder allocation: each count within 1 of ``n * f``."""
    exact = [n * f for f in fractions]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(ds: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> Tuple[Dataset, ...]:
    """Stratified, seeded split into ``len(fractions)`` disjoint parts."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, not 1")
    rng = np.random.default_rng(seed)
    labels = ds.labels()
    parts: List[List[int]] = [[] for _ in fractions]
    for k in range(ds.class_count):
        idx = np.flatnonzero(labels == k)
        if len(idx) < 3:
            raise InsufficientSamplesError(f"class {ds.class_names[k]!r} has {len(idx)} samples (< 3)")
        idx = idx[rng.permutation(len(idx))]
        start = 0
        for part, count in zip(parts, _allocate(len(idx), fractions)):
            part.extend(idx[start:start + count].tolist())
            start += count
    return tuple(ds.subset(sorted(p)) for p in parts)


# ---------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugmentConfig:
    """Set a range to ``None`` (or shift to 0) to disable that operation."""

    zoom_range: Optional[Tuple[float, float]] = (0.10, 0.20)
    shift_range: float = 0.10
    flip: bool = True
    rotation_range: Optional[Tuple[float, float]] = (20.0, 90.0)
    brightness_range: Optional[Tuple[float, float]] = (0.9, 1.3)
    enabled: bool = True

    def __post_init__(self):
        for name in ("zoom_range", "rotation_range", "brightness_range"):
            r = getattr(self, name)
            if r is not None and r[0] > r[1]:
                raise ValueError(f"{name} {r} is not ordered")
        if not 0.0 <= self.shift_range < 1.0:
            raise ValueError("shift_range must be in [0, 1)")


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional coordinates, replicating edges."""
    h, w = img.shape
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy, fx = ys - y0, xs - x0
    top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
    bot = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
    return top + fy * (bot - top)


def affine_warp(img: np.ndarray, degrees: float = 0.0, zoom: float = 1.0,
                shift: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Center-anchored rotation (counter-clockwise), zoom and shift (dy, dx pixels)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy = (yy - cy - shift[0]) / zoom
    dx = (xx - cx - shift[1]) / zoom
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    src_x = c * dx - s * dy + cx
    src_y = s * dx + c * dy + cy
    return bilinear_sample(img, src_y, src_x)


def rotate_image(img: np.ndarray, degrees: float) -> np.ndarray:
    return affine_warp(img, degrees=degrees)


def augment_array(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Augment a float image with values in [0, 255]."""
    out = np.asarray(img, dtype=np.float64)
    if not cfg.enabled:
        return out
    if cfg.flip:
        if rng.random() < 0.5:
            out = out[:, ::-1]
        if rng.random() < 0.5:
            out = out[::-1, :]
    degrees, zoom, shift = 0.0, 1.0, (0.0, 0.0)
    if cfg.rotation_range is not None:
        degrees = rng.uniform(*cfg.rotation_range) * (1 if rng.random() < 0.5 else -1)
    if cfg.zoom_range is not None:
        factor = 1.0 + rng.uniform(*cfg.zoom_range)
        zoom = factor if rng.random() < 0.5 else 1.0 / factor
    if cfg.shift_range > 0:
        h, w = out.shape
        shift = (rng.uniform(-cfg.shift_range, cfg.shift_range) * h,
                 rng.uniform(-cfg.shift_range, cfg.shift_range) * w)
    if degrees != 0.0 or zoom != 1.0 or shift != (0.0, 0.0):
        out = affine_warp(out, degrees, zoom, shift)
    if cfg.brightness_range is not None:
        out = out * rng.uniform(*cfg.brightness_range)
    return np.clip(out, 0.0, 255.0)


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    if not cfg.enabled:
        return sample
    out = augment_array(sample.image, cfg, rng)
    return Sample(np.rint(out).astype(np.uint8), sample.label)


def batch_augmenter(cfg: AugmentConfig):
    """Adapter for training loops: augments an (N, H, W, 1) batch in [0, 1]."""
    def apply(xb: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = np.empty_like(xb)
        for i in range(len(xb)):
            out[i, :, :, 0] = augment_array(xb[i, :, :, 0] * 255.0, cfg, rng) / 255.0
        return out
    return apply


# ----------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class PreprocessConfig:
    size: int = 32


def _resize_axis(img: np.ndarray, out: int, axis: int) -> np.ndarray:
    n = img.shape[axis]
    if n == out:
        return img
    src = (np.arange(out) + 0.5) * (n / out) - 0.5
    src = np.clip(src, 0.0, n - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    f = src - i0
    a = np.take(img, i0, axis=axis)
    b = np.take(img, i1, axis=axis)
    shape = [1, 1]
    shape[axis] = out
    return a + f.reshape(shape) * (b - a)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers; returns float64."""
    img = np.asarray(img, dtype=np.float64)
    return _resize_axis(_resize_axis(img, out_h, 0), out_w, 1)


def preprocess(image: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Resize to ``cfg.size`` square and scale to [0, 1]; shape (1, S, S, 1)."""
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2-D grayscale image, got shape {image.shape}")
    out = resize_bilinear(image, cfg.size, cfg.size) / 255.0
    return out.astype(np.float32).reshape(1, cfg.size, cfg.size, 1)


def to_arrays(ds: Dataset, size: int = 32) -> Tuple[np.ndarray, np.ndarray]:
    cfg = PreprocessConfig(size)
    if not ds.samples:
        return np.zeros((0, size, size, 1), np.float32), np.zeros(0, np.int64)
    x = np.concatenate([preprocess(s.image, cfg) for s in ds.samples], axis=0)
    return x, ds.labels()
