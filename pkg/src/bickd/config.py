"""Experiment configuration: a single JSON document, validated field by field.

Example::

    {
      "dataset": {"kind": "blobs", "num_classes": 10, "dim": 20, "n_per_class": 300,
                  "spread": 0.4, "seed": 1, "eval_n_per_class": 200, "eval_seed": 2},
      "sampler": {"kind": "few_shot", "k_per_class": 10, "seed": 3},
      "teacher": {"hidden_dims": [64, 64]},
      "student": {"hidden_dims": [16]},
      "teacher_schedule": {"epochs": 40, "lr_decay_epochs": [20, 30, 36]},
      "student_schedule": {"epochs": 40, "lr_decay_epochs": [20, 30, 36]},
      "weights": {"alpha": 1, "beta": 2, "gamma": 2},
      "methods": ["vanilla_kd", "bickd"],
      "seeds": [1, 2, 3],
      "output_dir": "runs/demo"
    }

``dataset.kind`` may also be ``"idx"`` (``train_images``, ``train_labels`` and
optional ``eval_images``/``eval_labels``) or ``"csv"`` (``train`` and optional
``eval``).  Relative paths resolve against the config file's directory.
An optional ``regimes`` list of sampler objects turns ``sweep`` into a
regime sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .data import Dataset, SamplerSpec, load_idx, make_gaussian_blobs
from .errors import BickdError, ParameterError
from .losses import METHODS, LossWeights
from .models import MlpSpec
from .trainer import TrainSchedule


class ConfigError(BickdError, ValueError):
    """Invalid configuration; ``field`` names the offending key path."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


DATASET_KINDS = ("blobs", "idx", "csv")


@dataclass
class DatasetSpec:
    kind: str
    options: Dict[str, Any]
    base_dir: Path = field(default_factory=Path)

    def _path(self, key: str) -> Path:
        p = Path(self.options[key])
        return p if p.is_absolute() else self.base_dir / p

    def load(self) -> Tuple[Dataset, Dataset]:
        """Return ``(train, eval)``; eval falls back to train when absent."""
        o = self.options
        if self.kind == "blobs":
            common = dict(num_classes=int(o["num_classes"]), dim=int(o["dim"]),
                          spread=float(o["spread"]), scale=float(o.get("scale", 1.0)))
            train = make_gaussian_blobs(n_per_class=int(o["n_per_class"]), seed=int(o.get("seed", 0)), **common)
            if "eval_n_per_class" not in o:
                return train, train
            evald = make_gaussian_blobs(n_per_class=int(o["eval_n_per_class"]),
                                        seed=int(o.get("eval_seed", int(o.get("seed", 0)) + 1)), **common)
            return train, evald
        if self.kind == "idx":
            for key in ("train_images", "train_labels", "eval_images", "eval_labels"):
                if key in o and not self._path(key).is_file():
                    raise FileNotFoundError(f"dataset.{key}: no such file {self._path(key)}")
            num_classes = o.get("num_classes")
            train = load_idx(self._path("train_images"), self._path("train_labels"), num_classes)
            if "eval_images" not in o:
                return train, train
            evald = load_idx(self._path("eval_images"), self._path("eval_labels"), num_classes or train.num_classes)
            return train, evald
        for key in ("train", "eval"):
            if key in o and not self._path(key).is_file():
                raise FileNotFoundError(f"dataset.{key}: no such file {self._path(key)}")
        train = Dataset.from_csv(self._path("train"), o.get("num_classes"))
        if "eval" not in o:
            return train, train
        return train, Dataset.from_csv(self._path("eval"), train.num_classes)


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    sampler: SamplerSpec
    teacher: Dict[str, Any]
    student: Dict[str, Any]
    teacher_schedule: TrainSchedule
    student_schedule: TrainSchedule
    weights: LossWeights
    methods: List[str]
    seeds: List[int]
    output_dir: Optional[Path] = None
    regimes: List[SamplerSpec] = field(default_factory=list)
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    def teacher_spec(self, input_dim: int, num_classes: int) -> MlpSpec:
        return _mlp("teacher", self.teacher, input_dim, num_classes, int(self.teacher.get("seed", 0)))

    def student_spec(self, input_dim: int, num_classes: int, seed: int) -> MlpSpec:
        return _mlp("student", self.student, input_dim, num_classes, seed)

    def schedule_for_seed(self, seed: int) -> TrainSchedule:
        d = self.student_schedule.to_dict()
        d["seed"] = seed
        return TrainSchedule(**d)


def _mlp(name: str, d: Dict[str, Any], input_dim: int, num_classes: int, seed: int) -> MlpSpec:
    try:
        return MlpSpec(input_dim=input_dim, hidden_dims=tuple(d.get("hidden_dims", ())),
                       num_classes=num_classes, activation=d.get("activation", "relu"), seed=seed)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(name, str(exc)) from exc


def _build(cls, name: str, d: Any):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(name, "expected a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", f"unknown key (valid: {', '.join(sorted(known))})")
    try:
        return cls(**d)
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc


def _dataset(d: Any, base_dir: Path) -> DatasetSpec:
    if not isinstance(d, dict):
        raise ConfigError("dataset", "expected a JSON object")
    kind = d.get("kind", "blobs")
    if kind not in DATASET_KINDS:
        raise ConfigError("dataset.kind", f"must be one of {', '.join(DATASET_KINDS)}, got {kind!r}")
    required = {"blobs": ("num_classes", "dim", "n_per_class", "spread"),
                "idx": ("train_images", "train_labels"),
                "csv": ("train",)}[kind]
    for key in required:
        if key not in d:
            raise ConfigError(f"dataset.{key}", "required")
    if kind == "blobs":
        for key in ("num_classes", "dim", "n_per_class"):
            if not isinstance(d[key], int) or d[key] < 1:
                raise ConfigError(f"dataset.{key}", "must be a positive integer")
        if d["num_classes"] < 2:
            raise ConfigError("dataset.num_classes", "must be at least 2")
    options = {k: v for k, v in d.items() if k != "kind"}
    return DatasetSpec(kind, options, base_dir)


def from_dict(d: Dict[str, Any], base_dir: Union[str, Path] = ".") -> ExperimentConfig:
    """Validate a parsed config document.  Raises :class:`ConfigError`."""
    if not isinstance(d, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    base_dir = Path(base_dir)
    if "dataset" not in d:
        raise ConfigError("dataset", "required")

    methods = d.get("methods", ["vanilla_kd", "bickd"])
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods", "must be a non-empty list")
    for i, m in enumerate(methods):
        if m not in METHODS:
            raise ConfigError(f"methods[{i}]", f"unknown method {m!r}; valid: {', '.join(METHODS)}")
    seeds = d.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds", "must be a non-empty list of non-negative integers")
    for i, s in enumerate(seeds):
        if not isinstance(s, int) or isinstance(s, bool) or s < 0:
            raise ConfigError(f"seeds[{i}]", f"must be a non-negative integer, got {s!r}")

    for name in ("teacher", "student"):
        spec = d.get(name, {})
        if not isinstance(spec, dict):
            raise ConfigError(name, "expected a JSON object")
        bad = sorted(set(spec) - {"hidden_dims", "activation", "seed"})
        if bad:
            raise ConfigError(f"{name}.{bad[0]}", "unknown key (valid: activation, hidden_dims, seed)")

    regimes = d.get("regimes", [])
    if not isinstance(regimes, list):
        raise ConfigError("regimes", "must be a list of sampler objects")

    out = d.get("output_dir")
    return ExperimentConfig(
        dataset=_dataset(d["dataset"], base_dir),
        sampler=_build(SamplerSpec, "sampler", d.get("sampler")),
        teacher=d.get("teacher", {"hidden_dims": [64, 64]}),
        student=d.get("student", {"hidden_dims": [16]}),
        teacher_schedule=_build(TrainSchedule, "teacher_schedule", d.get("teacher_schedule")),
        student_schedule=_build(TrainSchedule, "student_schedule", d.get("student_schedule")),
        weights=_build(LossWeights, "weights", d.get("weights")),
        methods=list(methods),
        seeds=list(seeds),
        output_dir=None if out is None else (Path(out) if Path(out).is_absolute() else base_dir / out),
        regimes=[_build(SamplerSpec, f"regimes[{i}]", r) for i, r in enumerate(regimes)],
        raw=d,
    )


def load(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("--config", f"no such file {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"{path} is not valid JSON: {exc}") from exc
    return from_dict(doc, base_dir=path.parent)
