"""Central finite-difference verification of every differentiable path."""

from __future__ import annotations

from typing import Callable, Dict, List, Sequence

import numpy as np

from . import losses
from . import models
from . import tensor as tn
from .tensor import Tensor

STEP = 1e-6
TOLERANCE = 1e-4
# Gradients smaller than this are compared absolutely; central differences
# carry ~1e-10 of round-off regardless of the gradient's size.
SCALE_FLOOR = 1e-3


def numerical_grad(f: Callable[[], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|, SCALE_FLOOR)``."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), SCALE_FLOOR)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check(loss_fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = STEP) -> float:
    """Worst relative error of autodiff vs. finite differences over ``inputs``."""
    for x in inputs:
        x.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    worst = 0.0
    for x, a in zip(inputs, analytic):
        n = numerical_grad(lambda: loss_fn().item(), x.data, step)
        worst = max(worst, relative_error(a, n))
    return worst


def _op_cases(rng: np.random.Generator) -> Dict[str, float]:
    def u(*shape, low=-3.0, high=3.0):
        return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)

    m, k, n = rng.integers(1, 6, size=3)
    a, b, row, col = u(m, k), u(m, k), u(1, k), u(m, 1)
    pos = u(m, k, low=0.5, high=3.0)
    w = u(k, n)
    r1, r3 = rng.uniform(-1, 1, size=(m, k)), rng.uniform(-1, 1, size=(m, n))
    idx = rng.integers(0, m, size=int(rng.integers(1, 6)))
    rng_tau = rng.uniform(0.5, 5.0)
    cases = {
        "add": (lambda: _proj(a + b, r1), [a, b]),
        "add_row_broadcast": (lambda: _proj(a + row, r1), [a, row]),
        "sub_col_broadcast": (lambda: _proj(a - col, r1), [a, col]),
        "mul": (lambda: _proj(a * b, r1), [a, b]),
        "div": (lambda: _proj(a / pos, r1), [a, pos]),
        "scalar_ops": (lambda: _proj(2.5 * a - 1.0 + a / 3.0, r1), [a]),
        "exp": (lambda: _proj(tn.exp(a), r1), [a]),
        "log": (lambda: _proj(tn.log(pos), r1), [pos]),
        "abs": (lambda: _proj(tn.abs_(a), r1), [a]),
        "relu": (lambda: _proj(tn.relu(a), r1), [a]),
        "tanh": (lambda: _proj(tn.tanh(a), r1), [a]),
        "sqrt": (lambda: _proj(tn.sqrt(pos), r1), [pos]),
        "sum_axis0": (lambda: (tn.sum_(a, axis=0) * r1[0]).sum(), [a]),
        "mean_axis1": (lambda: (tn.mean(a, axis=1) * r1[:, 0]).sum(), [a]),
        "norm_axis1": (lambda: (tn.norm(a, axis=1) * r1[:, 0]).sum(), [a]),
        "norm_all": (lambda: tn.norm(a), [a]),
        "transpose": (lambda: _proj(tn.transpose(a), r1.T), [a]),
        "matmul": (lambda: _proj(a @ w, r3), [a, w]),
        "take_rows": (lambda: tn.sum_(a[idx] * a[idx]), [a]),
        "take_column": (lambda: (a[:, 0] * r1[:, 0]).sum(), [a]),
        "softmax_rows": (lambda: _proj(tn.softmax_rows(a, float(rng_tau)), r1), [a]),
        "log_softmax_rows": (lambda: _proj(tn.log_softmax_rows(a, float(rng_tau)), r1), [a]),
    }
    return {name: check(fn, ins) for name, (fn, ins) in cases.items()}


def _proj(out: Tensor, r: np.ndarray) -> Tensor:
    # random projection turns a tensor-valued op into a scalar test function
    return (out * r).sum()


def _loss_cases(rng: np.random.Generator) -> Dict[str, float]:
    b = int(rng.integers(2, 9))
    c = int(rng.integers(2, 9))
    s_logits = Tensor(rng.uniform(-3, 3, size=(b, c)), requires_grad=True)
    t_logits = Tensor(rng.uniform(-3, 3, size=(b, c)))
    labels = rng.integers(0, c, size=b)
    w = losses.LossWeights()  # α=1, β=2, γ=2, λ=0.1, τ=4
    w_t1 = losses.LossWeights(tau_contrast=1.0, kl_student_first=False)

    def batch(logits, tau=1.0):
        return losses.PredictionBatch(tn.softmax_rows(logits, tau), labels)

    def method(name, weights=w):
        return lambda: losses.method_loss(name, s_logits, t_logits, labels, weights)[0]

    cases = {
        "loss_ce": lambda: losses.loss_ce(s_logits, labels),
        "loss_kl": lambda: losses.loss_kl(batch(s_logits, 4.0), batch(t_logits, 4.0)),
        "loss_kl_flipped": lambda: losses.loss_kl(batch(s_logits, 4.0), batch(t_logits, 4.0), student_first=False),
        "loss_soa": lambda: losses.loss_soa(batch(s_logits), batch(t_logits)),
        "loss_coa": lambda: losses.loss_coa(batch(s_logits), batch(t_logits)),
        "loss_ca": lambda: losses.loss_ca(batch(s_logits), batch(t_logits)),
        "loss_sc": lambda: losses.loss_sc(s_logits, t_logits, labels, w),
        "loss_cc": lambda: losses.loss_cc(s_logits, t_logits, labels, w),
        "loss_vanilla_kd": lambda: losses.loss_vanilla_kd(s_logits, t_logits, labels, 0.1, 4.0),
        "loss_bickd": method("bickd"),
        "loss_bickd_tau1_flipped": method("bickd", w_t1),
        "sc_only": method("sc_only"),
        "cc_only": method("cc_only"),
        "oa_s": method("oa_s"),
        "oa_c": method("oa_c"),
    }
    u = Tensor(rng.uniform(0.05, 3, size=c), requires_grad=True)
    v = Tensor(rng.uniform(0.05, 3, size=c), requires_grad=True)
    out = {name: check(fn, [s_logits]) for name, fn in cases.items()}
    out["cosine_distance"] = check(lambda: losses.cosine_distance(u, v), [u, v])
    return out


def _mlp_cases(rng: np.random.Generator) -> Dict[str, float]:
    out = {}
    d, c, b = int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(2, 7))
    x = rng.uniform(-3, 3, size=(b, d))
    labels = rng.integers(0, c, size=b)
    t_logits = Tensor(rng.uniform(-3, 3, size=(b, c)))
    for act in models.ACTIVATIONS:
        spec = models.MlpSpec(d, (int(rng.integers(1, 5)), int(rng.integers(1, 4))), c, act,
                              seed=int(rng.integers(0, 2**31)))
        params = models.init(spec)
        for bias in params.biases:
            bias.data = rng.uniform(-0.5, 0.5, size=bias.shape)
        fn = lambda: losses.loss_bickd(models.forward(params, x), t_logits, labels)[0]
        out[f"mlp_{act}_bickd"] = check(fn, params.parameters())
    return out


def run_suite(trials: int = 100, seed: int = 0) -> Dict[str, float]:
    """Worst relative error per case over ``trials`` randomised draws."""
    rng = np.random.default_rng(seed)
    worst: Dict[str, float] = {}
    for _ in range(trials):
        for group in (_op_cases, _loss_cases, _mlp_cases):
            for name, err in group(rng).items():
                worst[name] = max(worst.get(name, 0.0), err)
    return worst


def summarize(worst: Dict[str, float]) -> List[str]:
    width = max(len(k) for k in worst)
    return [f"{name:<{width}}  {err:.3e}" for name, err in sorted(worst.items())]
