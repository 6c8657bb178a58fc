"""Datasets on disk, batching, and the synthetic-domain generator.

A dataset directory holds one ``*.xten`` tensor (C x H x W) per sample,
an optional ``labels.csv`` (``filename,label``) and optional per-sample
``<stem>.mask.xten`` segmentation masks. Samples are ordered by file name.
"""

from __future__ import annotations

import csv
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import xten
from .errors import DataError, ShapeError
from .ops import resize_bilinear

MASK_SUFFIX = ".mask.xten"
LABELS_NAME = "labels.csv"


@dataclass
class Dataset:
    """An ordered, in-memory set of C x H x W samples."""

    samples: np.ndarray  # N x C x H x W float32
    labels: np.ndarray | None = None
    files: list[str] = field(default_factory=list)
    root: Path | None = None
    masks: list[np.ndarray] | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 4:
            raise ShapeError(f"dataset samples must be N x C x H x W, got {self.samples.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.samples),):
                raise DataError("labels must have one entry per sample")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    def subset(self, index: Sequence[int]) -> "Dataset":
        index = np.asarray(index, dtype=np.intp)
        return Dataset(
            samples=self.samples[index],
            labels=None if self.labels is None else self.labels[index],
            files=[self.files[i] for i in index] if self.files else [],
            root=self.root,
            masks=None if self.masks is None else [self.masks[i] for i in index],
        )


def as_samples(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.samples
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 4:
        raise ShapeError(f"expected N x C x H x W data, got {arr.shape}")
    return arr


def batch_iter(data, batch_size: int) -> Iterator[np.ndarray]:
    """Yield consecutive N x C x H x W batches in dataset order; the last may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    x = as_samples(data)
    for start in range(0, len(x), batch_size):
        yield x[start:start + batch_size]


# -- loading ---------------------------------------------------------------


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Decode an 8-bit binary PPM (P6) to a float32 C x H x W array in [0, 1]."""
    buf = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(buf, pos)
        if m is None:
            raise DataError(f"{path}: truncated PPM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P6":
        raise DataError(f"{path}: not a binary PPM (P6) file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    payload = buf[pos:pos + width * height * 3]
    if len(payload) != width * height * 3:
        raise DataError(f"{path}: truncated PPM payload")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return (img.transpose(2, 0, 1).astype(np.float32) / np.float32(255))


def ppm_to_xten(src: str | os.PathLike, dst: str | os.PathLike) -> None:
    xten.save(dst, read_ppm(src))


def _read_labels(root: Path, names: list[str]) -> np.ndarray | None:
    path = root / LABELS_NAME
    if not path.exists():
        return None
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "filename":
                continue
            try:
                table[row[0]] = int(row[1])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}: bad row {row!r}") from exc
    missing = [n for n in names if n not in table]
    if missing:
        raise DataError(f"{path}: no label for {missing[:3]}")
    return np.array([table[n] for n in names], dtype=np.int64)


def load_dataset(
    root: str | os.PathLike,
    target_shape: Sequence[int] | None = None,
    normalization: dict | None = None,
    from_ppm: bool = False,
) -> Dataset:
    """Load every sample under ``root``, resized to ``target_shape``.

    ``target_shape`` is (C, H, W) or a model's (N, C, H, W). ``normalization``
    is a model's ``{"mean": [...], "std": [...]}`` and is applied per channel
    after resizing; without it, samples already at the target size are
    returned bit-exact.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    if from_ppm:
        paths = sorted(p for p in root.iterdir() if p.suffix == ".ppm")
    else:
        paths = sorted(
            p for p in root.iterdir() if p.suffix == ".xten" and not p.name.endswith(MASK_SUFFIX)
        )
    if not paths:
        raise DataError(f"dataset root {root} contains no samples")
    if target_shape is not None:
        target_shape = tuple(int(d) for d in target_shape)[-3:]
    samples = []
    for p in paths:
        arr = read_ppm(p) if from_ppm else xten.load(p).astype(np.float32, copy=False)
        if arr.ndim != 3:
            raise DataError(f"{p}: sample must be C x H x W, got shape {arr.shape}")
        if samples and arr.shape[0] != samples[0].shape[0]:
            raise DataError(f"{p}: {arr.shape[0]} channels, expected {samples[0].shape[0]}")
        if target_shape is not None:
            c, h, w = target_shape
            if arr.shape[0] != c:
                raise DataError(f"{p}: {arr.shape[0]} channels, model expects {c}")
            if arr.shape[1:] != (h, w):
                arr = resize_bilinear(arr[None], h, w)[0]
        samples.append(arr)
    if len({s.shape for s in samples}) != 1:
        raise DataError(f"{root}: samples differ in size; pass target_shape to resize them")
    x = np.stack(samples)
    if normalization is not None:
        x = normalize(x, normalization)
    names = [p.name for p in paths]
    masks = None
    mask_paths = [root / (p.name[: -len(p.suffix)] + MASK_SUFFIX) for p in paths]
    present = [m.exists() for m in mask_paths]
    if any(present):
        if not all(present):
            missing = [n for n, ok in zip(names, present) if not ok]
            raise DataError(f"{root}: missing masks for {missing[:3]}")
        masks = [xten.load(m) for m in mask_paths]
    return Dataset(samples=x, labels=_read_labels(root, names), files=names, root=root, masks=masks)


def normalize(x: np.ndarray, normalization: dict) -> np.ndarray:
    mean = np.asarray(normalization["mean"], dtype=np.float32)
    std = np.asarray(normalization["std"], dtype=np.float32)
    if mean.shape != (x.shape[1],) or std.shape != (x.shape[1],):
        raise DataError(f"normalization constants do not match {x.shape[1]} channels")
    return ((x - mean[None, :, None, None]) / std[None, :, None, None]).astype(np.float32)


def save_dataset(dataset: Dataset, out_root: str | os.PathLike) -> None:
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    width = max(6, len(str(len(dataset) - 1)))
    names = dataset.files or [f"{i:0{width}d}.xten" for i in range(len(dataset))]
    for name, sample in zip(names, dataset.samples):
        xten.save(out_root / name, sample)
    if dataset.labels is not None:
        with open(out_root / LABELS_NAME, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["filename", "label"])
            writer.writerows(zip(names, dataset.labels.tolist()))


# -- synthetic domains -----------------------------------------------------

FAMILIES = {"stripes": 8, "checker": 4, "blobs": 4}
BASE_LEVEL = 0.5
# fraction of the angular spacing between stripe classes covered by jitter
STRIPE_JITTER = 1.0


@dataclass(frozen=True)
class DomainSpec:
    """Recipe for a synthetic image domain.

    Pixel value for channel ``c`` is
    ``BASE_LEVEL + contrast * gain_c * pattern + shift[c] + noise * N(0, 1)``
    where ``pattern`` lies in [-1, 1] and ``gain_c`` is drawn per sample.
    """

    seed: int
    family: str = "stripes"
    shift: tuple[float, ...] = (0.0, 0.0, 0.0)
    contrast: float = 1.0
    noise: float = 0.0
    resolution: tuple[int, int] = (32, 32)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown pattern family {self.family!r}; choose from {sorted(FAMILIES)}")
        object.__setattr__(self, "shift", tuple(float(s) for s in self.shift))
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))

    @property
    def channels(self) -> int:
        return len(self.shift)

    @property
    def num_classes(self) -> int:
        return FAMILIES[self.family]


def _stripes(rng, label, yy, xx, size):
    step = math.pi / FAMILIES["stripes"]
    theta = step * (label + STRIPE_JITTER * rng.uniform(-0.5, 0.5))
    freq = rng.uniform(2.0, 4.5)
    phase = rng.uniform(0, 2 * math.pi)
    u = (xx * math.cos(theta) + yy * math.sin(theta)) / size
    return np.sin(2 * math.pi * freq * u + phase)


def _checker(rng, label, yy, xx, size):
    cell = (2, 4, 8, 16)[label] * rng.uniform(0.85, 1.15)
    oy, ox = rng.uniform(0, 2 * cell, size=2)
    return np.sign(np.sin(math.pi * (yy + oy) / cell)) * np.sign(np.sin(math.pi * (xx + ox) / cell))


def _blobs(rng, label, yy, xx, size):
    p = np.zeros_like(yy)
    for _ in range(label + 1):
        cy, cx = rng.uniform(0.15, 0.85, size=2) * size
        r = rng.uniform(0.06, 0.12) * size
        p += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    return 2 * np.clip(p, 0, 1) - 1


_PATTERNS = {"stripes": _stripes, "checker": _checker, "blobs": _blobs}


def synthesize(spec: DomainSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministically draw ``n`` labeled images; returns (N x C x H x W, labels)."""
    if n <= 0:
        raise ValueError(f"sample count must be positive, got {n}")
    h, w = spec.resolution
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    pattern_rng = np.random.default_rng([spec.seed, 0])
    noise_rng = np.random.default_rng([spec.seed, 1])
    make = _PATTERNS[spec.family]
    c = spec.channels
    shift = np.asarray(spec.shift)[:, None, None]
    images = np.empty((n, c, h, w), dtype=np.float32)
    labels = pattern_rng.integers(0, spec.num_classes, size=n)
    for k in range(n):
        p = make(pattern_rng, int(labels[k]), yy, xx, max(h, w))
        gain = pattern_rng.uniform(0.15, 0.35, size=c)[:, None, None]
        img = BASE_LEVEL + spec.contrast * gain * p[None] + shift
        if spec.noise:
            img = img + spec.noise * noise_rng.standard_normal((c, h, w))
        images[k] = img
    return images, labels


def generate_domain(spec: DomainSpec, n: int, out_root: str | os.PathLike) -> Dataset:
    """Write ``n`` synthetic samples plus ``labels.csv`` under ``out_root``."""
    images, labels = synthesize(spec, n)
    save_dataset(Dataset(samples=images, labels=labels), out_root)
    return load_dataset(out_root)
