"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

The tape is dynamic: every primitive call creates a new :class:`Tensor` that
remembers its parents and a closure mapping the output gradient to parent
gradients. Nodes receive monotonically increasing ids on creation, so sorting
the reachable set by id gives a valid topological order.
"""
from __future__ import annotations

import itertools
import threading
from collections.abc import Callable, Iterable, Iterator

import numpy as np

from .errors import ContractError, ShapeError

_ids = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return not getattr(_state, "no_grad", False)


class no_grad:
    """Context manager disabling graph recording (thread-local)."""

    def __enter__(self):
        self._prev = getattr(_state, "no_grad", False)
        _state.no_grad = True

    def __exit__(self, *exc):
        _state.no_grad = self._prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor(data, op=op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(data, (a, b), backward, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def softmax(a) -> Tensor:
    """Row-wise softmax over the last axis, stabilized by the row max."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    p = ex / ex.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (a,), backward, "softmax")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    data = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(data), (a,), backward, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _node(out, (a,), backward, "sqrt")


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / a.data
    return _node(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis`` (kept as a size-1 axis). Subgradient 0 at the origin."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * a.data / safe, 0.0),)

    return _node(out, (a,), backward, "norm")


def gather_cols(a, cols) -> Tensor:
    """``a[:, cols]``; the adjoint scatters back into the selected columns."""
    a = as_tensor(a)
    cols = np.asarray(cols, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_cols expects a matrix, got shape {a.shape}")
    if cols.size and (cols.min() < 0 or cols.max() >= a.shape[1]):
        raise ContractError(f"column index out of range for width {a.shape[1]}")

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, (slice(None), cols), g)
        return (full,)

    return _node(a.data[:, cols], (a,), backward, "gather_cols")


def scatter_cols(a, cols, width: int) -> Tensor:
    """Zero-filled ``[rows, width]`` matrix with ``a`` written into ``cols``."""
    a = as_tensor(a)
    cols = np.asarray(cols, dtype=np.intp)
    if a.data.ndim != 2 or a.shape[1] != cols.size:
        raise ShapeError(f"scatter_cols: {a.shape} does not fit {cols.size} columns")
    if cols.size and (cols.min() < 0 or cols.max() >= width):
        raise ContractError(f"column index out of range for width {width}")
    out = np.zeros((a.shape[0], width))
    out[:, cols] = a.data
    return _node(out, (a,), lambda g: (g[:, cols],), "scatter_cols")


def take_rows(a, rows) -> Tensor:
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.intp)

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, rows, g)
        return (full,)

    return _node(a.data[rows], (a,), backward, "take_rows")


def take(a, rows, cols) -> Tensor:
    """Elementwise pick ``a[rows[i], cols[i]]`` from a matrix."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, (rows, cols), g)
        return (full,)

    return _node(a.data[rows, cols], (a,), backward, "take")


def complex_scale(a, h) -> Tensor:
    """Multiply interleaved complex rows ``[re0, im0, re1, im1, ...]`` by a constant.

    ``h`` is a complex scalar or one complex value per row. It is treated as a
    constant, so the adjoint is multiplication by ``conj(h)``.
    """
    a = as_tensor(a)
    if a.data.ndim != 2 or a.shape[1] % 2:
        raise ShapeError(f"interleaved complex rows need an even width, got {a.shape}")
    h = np.asarray(h, dtype=np.complex128)
    hc = h.reshape(-1, 1) if h.ndim else h
    if h.ndim and h.size != a.shape[0]:
        raise ShapeError(f"{h.size} fading coefficients for {a.shape[0]} rows")

    def apply(x, c):
        re, im = x[:, 0::2], x[:, 1::2]
        out = np.empty_like(x)
        out[:, 0::2] = re * c.real - im * c.imag
        out[:, 1::2] = re * c.imag + im * c.real
        return out

    return _node(apply(a.data, hc), (a,), lambda g: (apply(g, np.conj(hc)),), "complex_scale")


# ------------------------------------------------------------------ backward


def _topo(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen[node._id] = node
        stack.extend(node._parents)
    return sorted(seen.values(), key=lambda t: t._id)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every reachable tensor requiring grad."""
    if root.size != 1:
        raise ContractError(f"backward() needs a scalar root, got shape {root.shape}")
    order = _topo(root)
    grads: dict[int, np.ndarray] = {root._id: np.ones(root.shape)}
    for node in reversed(order):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            prev = grads.get(parent._id)
            grads[parent._id] = pg if prev is None else prev + pg


def nodes(root: Tensor) -> list[Tensor]:
    """All tensors reachable from ``root`` in creation (topological) order."""
    return _topo(root)


# -------------------------------------------------------------- parameters


class ParamStore:
    """Named trainable tensors plus Adam moment estimates."""

    def __init__(self, params: Iterable[tuple[str, np.ndarray]] = ()):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step: dict[str, int] = {}
        for name, value in params:
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, op=name)
        self._params[name] = t
        self.m[name] = np.zeros(t.shape)
        self.v[name] = np.zeros(t.shape)
        self.step[name] = 0
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros(t.shape)) for k, t in self._params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            raise ContractError(
                f"parameter names differ: missing {sorted(set(self._params) - set(state))}, "
                f"unexpected {sorted(set(state) - set(self._params))}"
            )
        for k, t in self._params.items():
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != t.shape:
                raise ShapeError(f"{k}: expected {t.shape}, got {value.shape}")
            t.data = value.copy()


def adam_step(
    params: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """One bias-corrected Adam update, in place. Returns ``params`` for chaining."""
    if set(grads) != set(params):
        raise ContractError("gradients are not aligned with parameters")
    for name, t in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != t.shape:
            raise ShapeError(f"gradient for {name}: expected {t.shape}, got {g.shape}")
        params.step[name] += 1
        k = params.step[name]
        m = params.m[name] = beta1 * params.m[name] + (1 - beta1) * g
        v = params.v[name] = beta2 * params.v[name] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**k)
        v_hat = v / (1 - beta2**k)
        t.data = t.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params
