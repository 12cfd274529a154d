"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records its inputs and a local gradient rule
on the output tensor.  Calling :meth:`Tensor.backward` on a scalar walks the
recorded graph in reverse topological order and accumulates ``grad`` on all
leaves created with ``requires_grad=True``.

Broadcasting is deliberately narrow: two operands must either have identical
shapes, or one of them must be a scalar, or (for equal ndim) each axis must
match or be 1.  That covers row-vector and column-vector broadcasting, which
is all the losses and layers need.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ParameterError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """A float64 array that optionally participates in gradient recording.

    Args:
        data: Anything ``np.asarray`` accepts.  Always copied to float64.
        requires_grad: Whether this tensor is a leaf that collects ``grad``.

    Attributes:
        data: The underlying C-contiguous ``np.ndarray``.
        grad: Accumulated gradient (same shape as ``data``) or ``None``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "op")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._grad_fn: Optional[_GradFn] = None
        self.op = "leaf"

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def zero_grad(self) -> None:
        """Drop the accumulated gradient."""
        self.grad = None

    def detach(self) -> "Tensor":
        """Return a new leaf sharing no graph history (stop-gradient)."""
        return Tensor(self.data, requires_grad=False)

    # -------------------------------------------------------------- autodiff
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every ``requires_grad`` leaf.

        ``self`` must be a scalar unless an explicit upstream ``grad`` is given.
        Gradients add onto whatever is already stored in ``leaf.grad``; call
        :func:`zero_grad` between steps.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ShapeError(f"upstream grad shape {grad.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # ------------------------------------------------------------ arithmetic
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    # --------------------------------------------------------- method aliases
    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def abs(self) -> "Tensor":
        return abs_(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def norm(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return norm(self, axis, keepdims)

    def transpose(self) -> "Tensor":
        return transpose(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _topological_order(root: Tensor) -> list:
    """Iterative DFS post-order; each node appears exactly once."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], grad_fn: _GradFn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data, dtype=np.float64)
    out.grad = None
    parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    out.op = op
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0 or a.size == 1 and a.ndim <= b.ndim:
        return
    if b.size == 1 and b.ndim <= a.ndim:
        return
    if a.ndim == b.ndim and all(x == y or x == 1 or y == 1 for x, y in zip(a.shape, b.shape)):
        return
    raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def grad_fn(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _make(out, (a, b), grad_fn, "div")


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def abs_(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def clip_min(a: ArrayLike, floor: float) -> Tensor:
    """``max(a, floor)`` elementwise; gradient is zero where clipped."""
    a = as_tensor(a)
    mask = a.data > floor
    return _make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "clip_min")


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


# ----------------------------------------------------------------- reductions
def _normalize_axis(a: Tensor, axis: Optional[int]) -> Optional[int]:
    if axis is None:
        return None
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


def sum_(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axis = _normalize_axis(a, axis)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), grad_fn, "sum")


def mean(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[_normalize_axis(a, axis)]
    return sum_(a, axis, keepdims) / float(n)


def norm(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Euclidean norm over ``axis`` (all entries when ``axis`` is None)."""
    a = as_tensor(a)
    axis = _normalize_axis(a, axis)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def grad_fn(g):
        if axis is None:
            g = np.reshape(g, (1,) * a.ndim)
        elif not keepdims:
            g = np.expand_dims(g, axis)
        return (g * a.data / out,)

    shown = out if keepdims else (out.reshape(()) if axis is None else np.squeeze(out, axis))
    return _make(shown, (a,), grad_fn, "norm")


# -------------------------------------------------------------- linear algebra
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def take(a: ArrayLike, index) -> Tensor:
    """Row/column slicing and integer-array indexing (``a[index]``)."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    out = a.data[index]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), grad_fn, "take")


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along axis 0."""
    rows = [as_tensor(r) for r in rows]
    sizes = np.cumsum([r.shape[0] for r in rows])[:-1]
    out = np.concatenate([r.data for r in rows], axis=0)
    return _make(out, rows, lambda g: tuple(np.split(g, sizes, axis=0)), "stack_rows")


def detach(a: ArrayLike) -> Tensor:
    return as_tensor(a).detach()


# ------------------------------------------------------------------- softmax
def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0 or not np.isfinite(tau):
        raise ParameterError(f"temperature must be a positive finite number, got {tau}")
    return tau


def log_softmax_rows(f: ArrayLike, tau: float = 1.0) -> Tensor:
    """Row-wise ``log softmax(f / tau)`` computed via log-sum-exp."""
    f = as_tensor(f)
    tau = _check_tau(tau)
    if f.ndim != 2:
        raise ShapeError(f"log_softmax_rows expects B×C, got shape {f.shape}")
    z = f.data / tau
    z = z - z.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(out)

    def grad_fn(g):
        return ((g - p * g.sum(axis=1, keepdims=True)) / tau,)

    return _make(out, (f,), grad_fn, "log_softmax")


def softmax_rows(f: ArrayLike, tau: float = 1.0) -> Tensor:
    """Row-wise ``softmax(f / tau)`` with max-subtraction for stability."""
    f = as_tensor(f)
    tau = _check_tau(tau)
    if f.ndim != 2:
        raise ShapeError(f"softmax_rows expects B×C, got shape {f.shape}")
    z = f.data / tau
    e = np.exp(z - z.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)) / tau,)

    return _make(p, (f,), grad_fn, "softmax")


# ------------------------------------------------------ non-differentiable
def argmax(a: ArrayLike, axis: int = 1) -> np.ndarray:
    """Index of the largest entry; ties resolve to the lowest index."""
    return np.argmax(as_tensor(a).data, axis=axis)


def topk(a: ArrayLike, k: int) -> np.ndarray:
    """Column indices of the ``k`` largest entries per row, best first.

    Ties are broken in favour of the lower column index.
    """
    data = as_tensor(a).data
    if data.ndim != 2:
        raise ShapeError(f"topk expects a 2-D tensor, got shape {data.shape}")
    if not 1 <= k <= data.shape[1]:
        raise ParameterError(f"k must be in [1, {data.shape[1]}], got {k}")
    order = np.argsort(-data, axis=1, kind="stable")
    return order[:, :k]


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
