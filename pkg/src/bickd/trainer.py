"""Teacher pretraining and student distillation loops."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import metrics
from . import models
from .data import Dataset, batches
from .errors import BickdError, ParameterError
from .losses import METHODS, LossBreakdown, LossWeights, method_loss
from .models import MlpSpec, ModelParams
from .tensor import Tensor

logger = logging.getLogger(__name__)

BREAKDOWN_KEYS = ("ce", "kl", "soa", "coa", "ca", "total")
RECORD_FIELDS = (
    "epoch", "lr", *BREAKDOWN_KEYS, "train_top1", "eval_top1", "eval_top5",
    "offdiag_cos_mean", "offdiag_cos_max", "within_class_cos_mean", "accuracy_std",
)


class DivergenceError(BickdError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, breakdown: Optional[LossBreakdown] = None):
        super().__init__(message)
        self.breakdown = breakdown


@dataclass
class TrainSchedule:
    """Optimiser and learning-rate schedule.

    Defaults are a desk-scale shrink of the 240-epoch protocol; use
    :meth:`full_protocol` for the full-length schedule.
    """

    epochs: int = 60
    batch_size: int = 64
    lr_init: float = 0.05
    lr_decay_epochs: Tuple[int, ...] = (30, 45, 55)
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        self.validate()

    def validate(self) -> None:
        if self.epochs < 0:
            raise ParameterError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be positive")
        if not self.lr_init > 0:
            raise ParameterError("lr_init must be positive")
        if not 0 < self.lr_decay_factor < 1:
            raise ParameterError("lr_decay_factor must be in (0, 1)")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be non-negative")
        d = self.lr_decay_epochs
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ParameterError("lr_decay_epochs must be strictly increasing")
        if d and (d[0] < 0 or self.epochs and d[-1] >= self.epochs):
            raise ParameterError("lr_decay_epochs must lie in [0, epochs)")

    @classmethod
    def full_protocol(cls, lr_init: float = 0.05, seed: int = 0) -> "TrainSchedule":
        return cls(epochs=240, batch_size=256, lr_init=lr_init, lr_decay_epochs=(150, 180, 210), seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        return d


def lr_at(schedule: TrainSchedule, epoch: int) -> float:
    """η₀ · factor^(number of decay epochs <= epoch)."""
    if not 0 <= epoch < schedule.epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {schedule.epochs})")
    passed = sum(1 for d in schedule.lr_decay_epochs if d <= epoch)
    return schedule.lr_init * schedule.lr_decay_factor**passed


class SGD:
    """SGD with optional (Nesterov) momentum and L2 weight decay.

    Per step, with ``g = grad + wd·θ``::

        v ← μ·v + g
        θ ← θ − η·(g + μ·v)     (Nesterov)
        θ ← θ − η·v             (classical)
    """

    def __init__(self, params: Sequence[Tensor], momentum: float = 0.9,
                 nesterov: bool = True, weight_decay: float = 5e-4):
        self.params = list(params)
        self.momentum = momentum
        self.nesterov = nesterov
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        mu = self.momentum
        for i, p in enumerate(self.params):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = mu * self.velocity[i] + g
            self.velocity[i] = v
            update = g + mu * v if self.nesterov else v
            p.data = p.data - lr * update

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class TrainReport:
    """One record per epoch plus a final summary."""

    method: str
    seed: int
    records: List[Dict[str, float]] = field(default_factory=list)
    initial: Dict[str, float] = field(default_factory=dict)
    summary: Dict[str, float] = field(default_factory=dict)

    @property
    def final(self) -> Dict[str, float]:
        return self.records[-1] if self.records else self.initial

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for rec in self.records:
            writer.writerow([_fmt(rec.get(k)) for k in RECORD_FIELDS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "initial": self.initial,
            "summary": self.summary,
            "records": self.records,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def evaluate(params: ModelParams, ds: Dataset) -> Dict[str, float]:
    """Top-1/top-5 accuracy and geometry statistics of ``params`` on ``ds``."""
    logits = models.predict(params, ds.features)
    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    geo = metrics.orthogonality_report(probs, ds.labels, logits=logits)
    return {
        "top1": metrics.topk_accuracy(logits, ds.labels, 1),
        "top5": metrics.topk_accuracy(logits, ds.labels, min(5, logits.shape[1])),
        "offdiag_cos_mean": geo.offdiag_cos_mean,
        "offdiag_cos_max": geo.offdiag_cos_max,
        "within_class_cos_mean": geo.within_class_cos_mean,
        "accuracy_std": geo.accuracy_std,
    }


def _epoch_record(epoch, lr, sums, n_batches, params, train, eval_data) -> Dict[str, float]:
    rec = {"epoch": epoch, "lr": lr}
    rec.update({k: sums[k] / n_batches for k in BREAKDOWN_KEYS})
    rec["train_top1"] = metrics.topk_accuracy(models.predict(params, train.features), train.labels, 1)
    ev = evaluate(params, eval_data if eval_data is not None else train)
    rec["eval_top1"] = ev["top1"]
    rec["eval_top5"] = ev["top5"]
    for k in ("offdiag_cos_mean", "offdiag_cos_max", "within_class_cos_mean", "accuracy_std"):
        rec[k] = ev[k]
    return rec


def _fit(params: ModelParams, train: Dataset, schedule: TrainSchedule, method: str,
         weights: LossWeights, teacher: Optional[ModelParams], eval_data: Optional[Dataset],
         seed: int) -> TrainReport:
    report = TrainReport(method=method, seed=seed)
    ev = evaluate(params, eval_data if eval_data is not None else train)
    report.initial = {f"eval_{k}" if k in ("top1", "top5") else k: v for k, v in ev.items()}
    opt = SGD(params.parameters(), schedule.momentum, schedule.nesterov, schedule.weight_decay)

    for epoch in range(schedule.epochs):
        lr = lr_at(schedule, epoch)
        sums = dict.fromkeys(BREAKDOWN_KEYS, 0.0)
        n_batches = 0
        for b, (x, y) in enumerate(batches(train, schedule.batch_size, seed, epoch)):
            logits = models.forward(params, x)
            teacher_logits = None if teacher is None else models.predict(teacher, x)
            if teacher_logits is None:
                teacher_logits = logits.detach()
            total, parts = method_loss(method, logits, teacher_logits, y, weights)
            if not np.isfinite(parts.total):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {b}: {parts.to_dict()}", parts
                )
            opt.zero_grad()
            total.backward()
            opt.step(lr)
            for k in BREAKDOWN_KEYS:
                sums[k] += getattr(parts, k)
            n_batches += 1
        if not params.is_finite():
            raise DivergenceError(f"non-finite parameters after epoch {epoch}", parts)
        rec = _epoch_record(epoch, lr, sums, n_batches, params, train, eval_data)
        report.records.append(rec)
        logger.debug("%s seed=%d epoch=%d total=%.6f eval_top1=%.4f", method, seed, epoch, rec["total"], rec["eval_top1"])

    final = report.final
    report.summary = {
        "top1": final.get("eval_top1"),
        "top5": final.get("eval_top5"),
        "offdiag_cos_mean": final.get("offdiag_cos_mean"),
        "within_class_cos_mean": final.get("within_class_cos_mean"),
        "accuracy_std": final.get("accuracy_std"),
        "initial_offdiag_cos_mean": report.initial.get("offdiag_cos_mean"),
    }
    return report


def train_teacher(spec: MlpSpec, dataset: Dataset, schedule: TrainSchedule,
                  eval_data: Optional[Dataset] = None) -> Tuple[ModelParams, TrainReport]:
    """Train a model from scratch on ground-truth labels only (cross-entropy)."""
    params = models.init(spec)
    report = _fit(params, dataset, schedule, "ce_only", LossWeights(alpha=1.0), None, eval_data, schedule.seed)
    return params, report


def distill(teacher: ModelParams, student_spec: MlpSpec, dataset: Dataset, schedule: TrainSchedule,
            w: Optional[LossWeights] = None, method: str = "bickd",
            eval_data: Optional[Dataset] = None) -> Tuple[ModelParams, TrainReport]:
    """Train a fresh student against a frozen teacher with one of :data:`METHODS`.

    The teacher is only ever evaluated, never updated.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")
    if teacher.spec.num_classes != student_spec.num_classes or teacher.spec.input_dim != student_spec.input_dim:
        raise ParameterError("teacher and student must share input_dim and num_classes")
    params = models.init(student_spec)
    report = _fit(params, dataset, schedule, method, w or LossWeights(), teacher, eval_data, schedule.seed)
    return params, report
