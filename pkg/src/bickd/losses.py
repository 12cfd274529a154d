"""Distillation losses on teacher/student prediction matrices.

Conventions used throughout:

* ``S`` is the student's B×C prediction matrix, ``T`` the teacher's.  Both are
  row-stochastic softmax outputs.
* Teacher inputs are always detached before use, so no loss ever sends
  gradient into the teacher.
* The KL term follows the written orientation ``KL(S, T) = Σ S·log(S/T)``
  (student as the first argument).  ``LossWeights.kl_student_first=False``
  flips it to the more common ``KL(T ‖ S)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from . import tensor as tn
from .errors import DegenerateInputError, ParameterError, ShapeError
from .tensor import Tensor

EPS = 1e-12

METHODS = ("ce_only", "vanilla_kd", "bickd", "sc_only", "cc_only", "oa_s", "oa_c")


@dataclass
class PredictionBatch:
    """Row-stochastic predictions plus the batch's ground-truth labels."""

    probs: Tensor
    labels: np.ndarray

    def __post_init__(self):
        self.probs = tn.as_tensor(self.probs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probs.ndim != 2:
            raise ShapeError(f"probs must be B×C, got shape {self.probs.shape}")
        if self.labels.shape != (self.probs.shape[0],):
            raise ShapeError(
                f"labels length {self.labels.shape} does not match batch size {self.probs.shape[0]}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ParameterError(f"labels must lie in [0, {self.num_classes})")

    @property
    def batch_size(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def from_logits(cls, logits, labels, tau: float = 1.0) -> "PredictionBatch":
        return cls(tn.softmax_rows(logits, tau), labels)


@dataclass
class LossWeights:
    """Scalar knobs and ablation toggles for the combined objective.

    ``alpha``/``beta``/``gamma`` weight the CE, sample-wise and class-wise
    terms.  ``lam`` balances CE against KL in vanilla KD.  ``tau_kl`` is the
    temperature of the KL branch; ``tau_contrast`` the temperature used for the
    orthogonality and class-alignment terms (``None`` follows ``tau_kl``).
    CE always uses τ=1.
    """

    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 2.0
    lam: float = 0.1
    tau_kl: float = 4.0
    tau_contrast: Optional[float] = None
    enable_soa: bool = True
    enable_coa: bool = True
    enable_ca: bool = True
    enable_kl: bool = True
    kl_tau_squared: bool = True
    kl_student_first: bool = True
    ca_batch_mean: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ParameterError(f"{name} must be a non-negative finite number, got {value}")
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError(f"lam must be in [0, 1], got {self.lam}")
        for name in ("tau_kl", "tau_contrast"):
            value = getattr(self, name)
            if value is None and name == "tau_contrast":
                continue
            if not (np.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be positive, got {value}")

    @property
    def contrast_tau(self) -> float:
        return self.tau_kl if self.tau_contrast is None else self.tau_contrast

    @property
    def kl_scale(self) -> float:
        return self.tau_kl**2 if self.kl_tau_squared else 1.0

    def for_method(self, method: str) -> "LossWeights":
        """Return a copy with the toggles a given ablation method implies."""
        if method not in METHODS:
            raise ParameterError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")
        if method == "sc_only":
            return replace(self, enable_coa=False, enable_ca=False)
        if method == "cc_only":
            return replace(self, enable_soa=False, enable_kl=False)
        return replace(self)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PairIndexSet:
    """Ordered index pairs (i, j) whose labels differ, plus a dense mask."""

    pairs: List[Tuple[int, int]]
    mask: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class LossBreakdown:
    """Per-term values entering a total loss.

    ``kl`` is recorded exactly as it enters the total, i.e. already multiplied
    by τ² when that scaling is active.
    """

    ce: float = 0.0
    kl: float = 0.0
    soa: float = 0.0
    coa: float = 0.0
    ca: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("ce", "kl", "soa", "coa", "ca", "total")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# ---------------------------------------------------------------- primitives
def cosine_distance(u, v) -> Tensor:
    """``1 - u·v / (‖u‖‖v‖)`` for two vectors; differentiable in both."""
    u, v = tn.as_tensor(u), tn.as_tensor(v)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"cosine_distance expects equal-length vectors, got {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u.data), np.linalg.norm(v.data)
    if nu == 0 or nv == 0:
        raise DegenerateInputError("cosine distance is undefined for a zero-norm vector")
    dot = (u * v).sum()
    return 1.0 - dot / (tn.clip_min(u.norm(), EPS) * tn.clip_min(v.norm(), EPS))


def _unit_rows(x: Tensor) -> Tensor:
    return x / tn.clip_min(x.norm(axis=1, keepdims=True), EPS)


def _unit_cols(x: Tensor) -> Tensor:
    return x / tn.clip_min(x.norm(axis=0, keepdims=True), EPS)


def build_pair_set(labels) -> PairIndexSet:
    """All ordered pairs (i, j) of batch positions with ``labels[i] != labels[j]``."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = labels[:, None] != labels[None, :]
    ii, jj = np.nonzero(mask)
    return PairIndexSet(pairs=list(zip(ii.tolist(), jj.tolist())), mask=mask)


def _check_pair(student: PredictionBatch, teacher: PredictionBatch) -> None:
    if student.probs.shape != teacher.probs.shape:
        raise ShapeError(
            f"student shape {student.probs.shape} != teacher shape {teacher.probs.shape}"
        )


# -------------------------------------------------------------------- losses
def loss_ce(student_logits, labels) -> Tensor:
    """Mean cross-entropy of the τ=1 softmax of ``student_logits``."""
    logits = tn.as_tensor(student_logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    logp = tn.log_softmax_rows(logits, 1.0)
    picked = logp[np.arange(len(labels)), labels]
    return -picked.mean()


def loss_kl(student: PredictionBatch, teacher: PredictionBatch, student_first: bool = True) -> Tensor:
    """Batch-mean KL divergence between student and teacher rows.

    With ``student_first`` (the default) this is ``(1/B) Σ_i Σ_j S·ln(S/T)``;
    otherwise ``(1/B) Σ_i Σ_j T·ln(T/S)``.  The teacher is detached.
    """
    _check_pair(student, teacher)
    s = student.probs
    t = teacher.probs.detach()
    log_s = tn.log(tn.clip_min(s, EPS))
    log_t = tn.log(tn.clip_min(t, EPS))
    if student_first:
        per_row = (s * (log_s - log_t)).sum(axis=1)
    else:
        per_row = (t * (log_t - log_s)).sum(axis=1)
    return per_row.mean()


def _kl_from_logits(student_logits: Tensor, teacher_logits: Tensor, tau: float, student_first: bool) -> Tensor:
    # log-softmax path: exact even when a probability underflows
    log_s = tn.log_softmax_rows(student_logits, tau)
    log_t = tn.log_softmax_rows(teacher_logits.detach(), tau)
    if student_first:
        per_row = (tn.exp(log_s) * (log_s - log_t)).sum(axis=1)
    else:
        per_row = (tn.exp(log_t) * (log_t - log_s)).sum(axis=1)
    return per_row.mean()


def pairwise_cosine_distance(a: Tensor, b: Tensor) -> Tensor:
    """Matrix of cosine distances between every row of ``a`` and every row of ``b``."""
    return 1.0 - _unit_rows(a) @ _unit_rows(b).T


def loss_soa(student: PredictionBatch, teacher: PredictionBatch, pairs: Optional[PairIndexSet] = None) -> Tensor:
    """Negative mean cosine distance between S_i and T_j over differently-labelled pairs.

    Returns exactly 0 when the batch holds a single class (no such pairs).
    """
    _check_pair(student, teacher)
    if pairs is None:
        pairs = build_pair_set(student.labels)
    if len(pairs) == 0:
        return tn.sum_(student.probs * 0.0)
    dist = pairwise_cosine_distance(student.probs, teacher.probs.detach())
    return -(dist * pairs.mask.astype(np.float64)).sum() / float(len(pairs))


def loss_coa(student: PredictionBatch, teacher: PredictionBatch) -> Tensor:
    """Negative mean cosine distance between S[:, j] and T[:, k] over j != k."""
    _check_pair(student, teacher)
    c = student.num_classes
    if c < 2:
        raise ParameterError("class-wise orthogonality needs at least two classes")
    sim = _unit_cols(student.probs).T @ _unit_cols(teacher.probs.detach())
    offdiag = 1.0 - np.eye(c)
    dist = (1.0 - sim) * offdiag
    return -dist.sum() / float(c * (c - 1))


def loss_ca(student: PredictionBatch, teacher: PredictionBatch, batch_mean: bool = False) -> Tensor:
    """Column-wise L1 distance between S and T, averaged over classes.

    The L1 distance sums over the batch, so the value grows with B unless
    ``batch_mean`` divides it out.
    """
    _check_pair(student, teacher)
    diff = (student.probs - teacher.probs.detach()).abs()
    per_col = diff.sum(axis=0)
    out = per_col.mean()
    if batch_mean:
        out = out / float(student.batch_size)
    return out


def loss_sc(
    student_logits,
    teacher_logits,
    labels,
    w: Optional[LossWeights] = None,
    pairs: Optional[PairIndexSet] = None,
) -> Tensor:
    """Sample-wise contrast: orthogonality amplification plus KL alignment."""
    return _sample_terms(tn.as_tensor(student_logits), tn.as_tensor(teacher_logits), labels, w or LossWeights(), pairs)[0]


def loss_cc(student_logits, teacher_logits, labels, w: Optional[LossWeights] = None) -> Tensor:
    """Class-wise contrast: orthogonality amplification plus L1 alignment."""
    return _class_terms(tn.as_tensor(student_logits), tn.as_tensor(teacher_logits), labels, w or LossWeights())[0]


def _zero_like(x: Tensor) -> Tensor:
    return tn.sum_(x * 0.0)


def _contrast_batches(student_logits: Tensor, teacher_logits: Tensor, labels, tau: float):
    s = PredictionBatch(tn.softmax_rows(student_logits, tau), labels)
    t = PredictionBatch(tn.softmax_rows(teacher_logits.detach(), tau), labels)
    return s, t


def _sample_terms(student_logits, teacher_logits, labels, w: LossWeights, pairs=None):
    zero = _zero_like(student_logits)
    soa = kl = zero
    if w.enable_soa:
        s, t = _contrast_batches(student_logits, teacher_logits, labels, w.contrast_tau)
        soa = loss_soa(s, t, pairs)
    if w.enable_kl:
        kl = w.kl_scale * _kl_from_logits(student_logits, teacher_logits, w.tau_kl, w.kl_student_first)
    return soa + kl, soa, kl


def _class_terms(student_logits, teacher_logits, labels, w: LossWeights):
    zero = _zero_like(student_logits)
    coa = ca = zero
    if w.enable_coa or w.enable_ca:
        s, t = _contrast_batches(student_logits, teacher_logits, labels, w.contrast_tau)
        if w.enable_coa:
            coa = loss_coa(s, t)
        if w.enable_ca:
            ca = loss_ca(s, t, batch_mean=w.ca_batch_mean)
    return coa + ca, coa, ca


def loss_bickd(student_logits, teacher_logits, labels, w: Optional[LossWeights] = None) -> Tuple[Tensor, LossBreakdown]:
    """``α·CE + β·(soa + kl) + γ·(coa + ca)``, honouring the component toggles."""
    w = w or LossWeights()
    student_logits = tn.as_tensor(student_logits)
    teacher_logits = tn.as_tensor(teacher_logits).detach()
    ce = loss_ce(student_logits, labels)
    sc, soa, kl = _sample_terms(student_logits, teacher_logits, labels, w)
    cc, coa, ca = _class_terms(student_logits, teacher_logits, labels, w)
    total = w.alpha * ce + w.beta * sc + w.gamma * cc
    return total, _breakdown(total, ce=ce, kl=kl, soa=soa, coa=coa, ca=ca)


def loss_vanilla_kd(student_logits, teacher_logits, labels, lam: float = 0.1, tau: float = 4.0,
                    tau_squared: bool = True, student_first: bool = True) -> Tensor:
    """``λ·CE + (1-λ)·τ²·KL`` (the τ² factor is dropped when ``tau_squared`` is False)."""
    return _vanilla_terms(tn.as_tensor(student_logits), tn.as_tensor(teacher_logits), labels,
                          lam, tau, tau_squared, student_first)[0]


def _vanilla_terms(student_logits, teacher_logits, labels, lam, tau, tau_squared, student_first):
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"lambda must be in [0, 1], got {lam}")
    ce = loss_ce(student_logits, labels)
    scale = tau**2 if tau_squared else 1.0
    kl = scale * _kl_from_logits(student_logits, teacher_logits, tau, student_first)
    return lam * ce + (1.0 - lam) * kl, ce, kl


def _breakdown(total: Tensor, **parts: Tensor) -> LossBreakdown:
    return LossBreakdown(total=total.item(), **{k: v.item() for k, v in parts.items()})


def method_loss(method: str, student_logits, teacher_logits, labels, w: LossWeights) -> Tuple[Tensor, LossBreakdown]:
    """Training objective for one of :data:`METHODS`.

    ``oa_s`` and ``oa_c`` keep the vanilla-KD objective and add a single
    orthogonality term (β·soa or γ·coa respectively).
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")
    student_logits = tn.as_tensor(student_logits)
    teacher_logits = tn.as_tensor(teacher_logits).detach()

    if method == "ce_only":
        ce = loss_ce(student_logits, labels)
        total = w.alpha * ce
        return total, _breakdown(total, ce=ce)

    if method in ("bickd", "sc_only", "cc_only"):
        return loss_bickd(student_logits, teacher_logits, labels, w.for_method(method))

    total, ce, kl = _vanilla_terms(student_logits, teacher_logits, labels, w.lam, w.tau_kl,
                                   w.kl_tau_squared, w.kl_student_first)
    parts = dict(ce=ce, kl=kl)
    if method == "oa_s":
        s, t = _contrast_batches(student_logits, teacher_logits, labels, w.contrast_tau)
        parts["soa"] = loss_soa(s, t)
        total = total + w.beta * parts["soa"]
    elif method == "oa_c":
        s, t = _contrast_batches(student_logits, teacher_logits, labels, w.contrast_tau)
        parts["coa"] = loss_coa(s, t)
        total = total + w.gamma * parts["coa"]
    return total, _breakdown(total, **parts)
