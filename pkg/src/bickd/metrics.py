"""Accuracy metrics and probability-space geometry statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import ParameterError


def _probs(preds) -> np.ndarray:
    probs = getattr(preds, "probs", preds)
    return np.asarray(getattr(probs, "data", probs), dtype=np.float64)


def _cos(u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


@dataclass
class GeometryStats:
    """Cosine geometry of class-mean prediction vectors.

    ``offdiag_*`` compare distinct class means (0 means orthogonal);
    ``within_class_cos_mean`` compares each sample with its own class mean.
    Classes without samples appear as ``None`` rows in ``class_mean_vectors``.
    """

    class_mean_vectors: List[Optional[List[float]]]
    offdiag_cos_mean: float
    offdiag_cos_max: float
    within_class_cos_mean: float
    per_class_accuracy: List[Optional[float]]
    accuracy_std: float

    def to_dict(self) -> dict:
        return {
            "offdiag_cos_mean": self.offdiag_cos_mean,
            "offdiag_cos_max": self.offdiag_cos_max,
            "within_class_cos_mean": self.within_class_cos_mean,
            "accuracy_std": self.accuracy_std,
            "per_class_accuracy": self.per_class_accuracy,
            "class_mean_vectors": self.class_mean_vectors,
        }


def class_means(preds, labels=None) -> Tuple[np.ndarray, np.ndarray]:
    """Mean prediction row per true class.

    Returns ``(means, present)``; rows of absent classes are NaN and flagged
    False in ``present``.
    """
    probs = _probs(preds)
    labels = np.asarray(preds.labels if labels is None else labels, dtype=np.int64)
    c = probs.shape[1]
    counts = np.bincount(labels, minlength=c)
    sums = np.zeros((c, c))
    np.add.at(sums, labels, probs)
    present = counts > 0
    means = np.full((c, c), np.nan)
    means[present] = sums[present] / counts[present, None]
    return means, present


def orthogonality_report(preds, labels=None, logits=None) -> GeometryStats:
    """Class-separation statistics for a prediction batch.

    ``logits`` (defaults to ``preds``) feed the per-class accuracy fields.
    """
    probs = _probs(preds)
    labels = np.asarray(preds.labels if labels is None else labels, dtype=np.int64)
    if probs.shape[1] < 2:
        raise ParameterError("geometry statistics need at least two classes")
    means, present = class_means(probs, labels)
    idx = np.nonzero(present)[0]

    unit = means[idx] / np.linalg.norm(means[idx], axis=1, keepdims=True)
    sim = unit @ unit.T
    off = ~np.eye(len(idx), dtype=bool)
    offdiag = sim[off]
    offdiag_mean = float(offdiag.mean()) if offdiag.size else 0.0
    offdiag_max = float(offdiag.max()) if offdiag.size else 0.0

    row_unit = probs / np.linalg.norm(probs, axis=1, keepdims=True)
    mean_unit = np.zeros_like(means)
    mean_unit[idx] = unit
    within = float(np.mean(np.sum(row_unit * mean_unit[labels], axis=1)))

    acc, std = per_class_accuracy(probs if logits is None else logits, labels)
    return GeometryStats(
        class_mean_vectors=[means[c].tolist() if present[c] else None for c in range(len(present))],
        offdiag_cos_mean=offdiag_mean,
        offdiag_cos_max=offdiag_max,
        within_class_cos_mean=within,
        per_class_accuracy=acc,
        accuracy_std=std,
    )


def topk_accuracy(logits, labels, k: int) -> float:
    """Fraction of rows whose label is among the ``k`` highest scores.

    Ties rank the lower class index first.
    """
    scores = _probs(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if not 1 <= k <= scores.shape[1]:
        raise ParameterError(f"k must be in [1, {scores.shape[1]}], got {k}")
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(top == labels[:, None], axis=1)))


def per_class_accuracy(logits, labels) -> Tuple[List[Optional[float]], float]:
    """Top-1 accuracy per true class and its population std.

    Classes with no samples get ``None`` and are left out of the std.
    """
    scores = _probs(logits)
    labels = np.asarray(labels, dtype=np.int64)
    c = scores.shape[1]
    correct = np.argmax(scores, axis=1) == labels
    hits = np.bincount(labels, weights=correct, minlength=c)
    counts = np.bincount(labels, minlength=c)
    acc = [float(hits[j] / counts[j]) if counts[j] else None for j in range(c)]
    seen = np.array([a for a in acc if a is not None])
    return acc, float(seen.std()) if seen.size else 0.0
