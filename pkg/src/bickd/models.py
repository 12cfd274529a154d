"""Fully connected classifiers built on :mod:`bickd.tensor`."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from . import tensor as tn
from .errors import ParameterError, ShapeError
from .tensor import Tensor

ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_FORMAT = "bickd-mlp-v1"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: Tuple[int, ...] = ()
    num_classes: int = 2
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ParameterError("layer widths must be positive")
        if self.num_classes < 2:
            raise ParameterError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        widths = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def param_count(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_dims)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d.get("hidden_dims", ())),
            num_classes=int(d["num_classes"]),
            activation=d.get("activation", "relu"),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class ModelParams:
    """Weights ``(fan_in, fan_out)`` and biases ``(1, fan_out)`` per layer."""

    spec: MlpSpec
    weights: List[Tensor] = field(default_factory=list)
    biases: List[Tensor] = field(default_factory=list)

    def parameters(self) -> List[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def zero_grad(self) -> None:
        tn.zero_grad(self.parameters())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.spec,
            [Tensor(w.data, requires_grad=True) for w in self.weights],
            [Tensor(b.data, requires_grad=True) for b in self.biases],
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def is_finite(self) -> bool:
        return all(np.isfinite(p.data).all() for p in self.parameters())


def init(spec: MlpSpec) -> ModelParams:
    """Kaiming-uniform weights in ±√(6/fan_in) and zero biases, seeded by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_dims:
        bound = np.sqrt(6.0 / fan_in)
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True))
        biases.append(Tensor(np.zeros((1, fan_out)), requires_grad=True))
    return ModelParams(spec, weights, biases)


def _check_input(params: ModelParams, shape) -> None:
    if len(shape) != 2 or shape[1] != params.spec.input_dim:
        raise ShapeError(f"expected input of shape (B, {params.spec.input_dim}), got {tuple(shape)}")


def forward(params: ModelParams, x) -> Tensor:
    """Logits ``B×C`` recorded on the autodiff graph."""
    x = tn.as_tensor(x)
    _check_input(params, x.shape)
    act = tn.relu if params.spec.activation == "relu" else tn.tanh
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = act(h)
    return h


def predict(params: ModelParams, x) -> np.ndarray:
    """Logits as a plain array, without building a graph."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    _check_input(params, x.shape)
    last = len(params.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.data + b.data
        if i < last:
            h = np.maximum(h, 0.0) if params.spec.activation == "relu" else np.tanh(h)
    return h


# ---------------------------------------------------------------- checkpoints
def save(params: ModelParams, path: Union[str, Path]) -> None:
    """Write a JSON manifest; float ``repr`` round-trips every value exactly."""
    layers = [
        {"weight": w.data.ravel().tolist(), "weight_shape": list(w.shape),
         "bias": b.data.ravel().tolist(), "bias_shape": list(b.shape)}
        for w, b in zip(params.weights, params.biases)
    ]
    doc = {"format": CHECKPOINT_FORMAT, "spec": params.spec.to_dict(), "seed": params.spec.seed, "layers": layers}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc))


def load(path: Union[str, Path]) -> ModelParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    spec = MlpSpec.from_dict(doc["spec"])
    weights, biases = [], []
    for layer, (fan_in, fan_out) in zip(doc["layers"], spec.layer_dims):
        w = np.array(layer["weight"], dtype=np.float64).reshape(layer["weight_shape"])
        b = np.array(layer["bias"], dtype=np.float64).reshape(layer["bias_shape"])
        if w.shape != (fan_in, fan_out) or b.shape != (1, fan_out):
            raise ShapeError(f"{path}: layer shapes do not match the stored spec")
        weights.append(Tensor(w, requires_grad=True))
        biases.append(Tensor(b, requires_grad=True))
    if len(weights) != len(spec.layer_dims):
        raise ShapeError(f"{path}: expected {len(spec.layer_dims)} layers, found {len(weights)}")
    return ModelParams(spec, weights, biases)


def from_arrays(spec: MlpSpec, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> ModelParams:
    return ModelParams(
        spec,
        [Tensor(w, requires_grad=True) for w in weights],
        [Tensor(np.reshape(b, (1, -1)), requires_grad=True) for b in biases],
    )
