"""Datasets, IDX ingestion and the few-shot / long-tailed resamplers."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple, Union

import numpy as np

from .errors import BickdError, ParameterError, ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SAMPLER_KINDS = ("full", "few_shot", "long_tail")


class IdxError(BickdError):
    """Base class for IDX parse failures."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


class SamplingError(BickdError, ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise ShapeError(f"features {features.shape} and labels {labels.shape} disagree")
        if len(labels) < 1:
            raise ParameterError("a dataset needs at least one sample")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ParameterError(f"labels must lie in [0, {self.num_classes})")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def select(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.num_classes)

    def to_csv(self, path: Union[str, Path]) -> None:
        """Write ``feature_0..feature_{d-1},label`` rows with a header."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"feature_{i}" for i in range(self.dim)] + ["label"])
            for row, label in zip(self.features, self.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])

    @classmethod
    def from_csv(cls, path: Union[str, Path], num_classes: Optional[int] = None) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[-1] != "label":
                raise ValueError(f"{path}: last CSV column must be 'label'")
            rows = [r for r in reader if r]
        features = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64)
        labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
        return cls(features, labels, num_classes or int(labels.max()) + 1)


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "full"
    k_per_class: Optional[int] = None
    rho: Optional[float] = None
    seed: int = 0
    n_max: Optional[int] = None

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ParameterError(f"sampler kind must be one of {SAMPLER_KINDS}, got {self.kind!r}")
        if self.kind == "few_shot" and (self.k_per_class is None or self.k_per_class < 1):
            raise ParameterError("few_shot sampling requires a positive k_per_class")
        if self.kind == "long_tail" and (self.rho is None or not self.rho >= 1):
            raise ParameterError("long_tail sampling requires rho >= 1")

    @property
    def label(self) -> str:
        if self.kind == "few_shot":
            return f"few_shot_k{self.k_per_class}"
        if self.kind == "long_tail":
            return f"long_tail_rho{self.rho:g}"
        return "full"


# ------------------------------------------------------------------ synthetic
def blob_centers(num_classes: int, dim: int, scale: float = 1.0) -> np.ndarray:
    """Deterministic class centres.

    With ``dim >= num_classes`` the centres are the scaled standard basis
    vectors (a regular simplex, pairwise distance ``scale·√2``).  Otherwise they
    sit on a circle in the first two coordinates with the same neighbour
    distance.
    """
    centers = np.zeros((num_classes, dim))
    if dim >= num_classes:
        centers[np.arange(num_classes), np.arange(num_classes)] = scale
        return centers
    if dim < 2:
        centers[:, 0] = scale * math.sqrt(2.0) * np.arange(num_classes)
        return centers
    angle = 2 * np.pi * np.arange(num_classes) / num_classes
    radius = scale * math.sqrt(2.0) / (2 * math.sin(np.pi / num_classes))
    centers[:, 0] = radius * np.cos(angle)
    centers[:, 1] = radius * np.sin(angle)
    return centers


def make_gaussian_blobs(num_classes: int, dim: int, n_per_class: int, spread: float,
                        seed: int, scale: float = 1.0) -> Dataset:
    """Isotropic Gaussian clusters around :func:`blob_centers`, grouped by class."""
    if num_classes < 1 or dim < 1 or n_per_class < 1:
        raise ParameterError("num_classes, dim and n_per_class must be positive")
    if spread < 0:
        raise ParameterError(f"spread must be non-negative, got {spread}")
    rng = np.random.default_rng(seed)
    centers = blob_centers(num_classes, dim, scale)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    noise = rng.standard_normal((len(labels), dim))
    return Dataset(centers[labels] + spread * noise, labels, num_classes)


# ------------------------------------------------------------------------ IDX
def _read_header(raw: bytes, path, magic: int, ndim: int) -> Tuple[int, ...]:
    need = 4 + 4 * ndim
    if len(raw) < need:
        raise IdxTruncatedError(f"{path}: file holds {len(raw)} bytes, header needs {need}")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:need])
    body = int(np.prod(dims, dtype=np.int64))
    if len(raw) - need < body:
        raise IdxTruncatedError(f"{path}: payload holds {len(raw) - need} bytes, header promises {body}")
    return dims


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path],
             num_classes: Optional[int] = None) -> Dataset:
    """Read an MNIST-style IDX image/label pair; pixels are scaled to [0, 1]."""
    raw_images = Path(images_path).read_bytes()
    raw_labels = Path(labels_path).read_bytes()
    n, rows, cols = _read_header(raw_images, images_path, IDX_IMAGES_MAGIC, 3)
    (m,) = _read_header(raw_labels, labels_path, IDX_LABELS_MAGIC, 1)
    if n != m:
        raise IdxCountMismatchError(f"{images_path} has {n} images but {labels_path} has {m} labels")
    if n == 0:
        raise IdxTruncatedError(f"{images_path}: no samples")
    pixels = np.frombuffer(raw_images, dtype=np.uint8, count=n * rows * cols, offset=16)
    labels = np.frombuffer(raw_labels, dtype=np.uint8, count=m, offset=8).astype(np.int64)
    features = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    return Dataset(features, labels, num_classes or int(labels.max()) + 1)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Inverse of :func:`load_idx` for uint8 ``N×rows×cols`` images."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# ---------------------------------------------------------------- resampling
def long_tail_counts(n_max: int, num_classes: int, rho: float) -> np.ndarray:
    """``round(n_max · rho^(-c/(C-1)))`` per class, floored at 1."""
    if num_classes == 1:
        return np.array([n_max])
    c = np.arange(num_classes)
    counts = np.floor(n_max * rho ** (-c / (num_classes - 1)) + 0.5).astype(np.int64)
    return np.maximum(counts, 1)


def subsample(ds: Dataset, spec: SamplerSpec) -> Dataset:
    """Select rows per the sampler; original row order is preserved."""
    if spec.kind == "full":
        return ds
    available = ds.class_counts
    if spec.kind == "few_shot":
        wanted = np.full(ds.num_classes, spec.k_per_class)
    else:
        n_max = spec.n_max if spec.n_max is not None else int(available.min())
        wanted = long_tail_counts(n_max, ds.num_classes, spec.rho)
    short = np.nonzero(wanted > available)[0]
    if short.size:
        c = int(short[0])
        raise SamplingError(f"class {c} has {available[c]} samples, {wanted[c]} requested")

    rng = np.random.default_rng(spec.seed)
    keep = []
    for c in range(ds.num_classes):
        idx = np.nonzero(ds.labels == c)[0]
        keep.append(rng.choice(idx, size=int(wanted[c]), replace=False))
    return ds.select(np.sort(np.concatenate(keep)))


def batches(ds: Dataset, batch_size: int, shuffle_seed: int, epoch: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield shuffled ``(features, labels)`` mini-batches; the last may be short."""
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(ds))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield ds.features[idx], ds.labels[idx]
