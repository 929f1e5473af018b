"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray and, when any input requires a gradient,
records the parents and a backward rule of the op that produced it.
:func:`backward` walks the tape in reverse topological order.

Storage is float32 by default. Ops keep whatever dtype numpy promotion gives
them, so a float64 copy of the parameters runs the same graph in double
precision (used by :mod:`selrank.tensor.gradcheck`). Reductions accumulate in
float64 and cast back.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import NumericError, ShapeError

DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_rule", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = np.zeros_like(arr) if requires_grad else None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_rule: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, dtype={self.data.dtype})"

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: expected a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        # python scalars must not promote float32 graphs to float64
        return Tensor(np.asarray(x, dtype=DTYPE))
    return Tensor(x)


def _result(data: np.ndarray, parents: Iterable[Tensor], rule, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: produced non-finite values")
    out = Tensor(data)
    out.op = op
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_rule = rule
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log: non-positive input")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)``; the gradient flows only where ``a > floor``."""
    a = as_tensor(a)
    mask = a.data > floor
    return _result(np.where(mask, a.data, floor).astype(a.data.dtype), (a,), lambda g: (g * mask,), "maximum")


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    z = as_tensor(logits)
    y = np.asarray(targets, dtype=z.data.dtype)
    if y.shape != z.shape:
        raise ShapeError(f"bce_with_logits: logits {z.shape} vs targets {y.shape}")
    loss = np.logaddexp(0.0, z.data) - y * z.data
    return _result(loss.astype(z.data.dtype), (z,), lambda g: (g * (_sigmoid(z.data) - y),), "bce_with_logits")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data

    def rule(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 1 and B.ndim == 2:
            return B @ g, np.outer(A, g)
        if A.ndim == 2 and B.ndim == 1:
            return np.outer(g, B), A.T @ g
        return g * B, g * A

    return _result(np.asarray(A @ B), (a, b), rule, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _result(y, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for shape {a.shape}") from None

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(y), (a,), rule, "slice")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(y, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None
    n = len(tensors)
    return _result(
        y,
        tensors,
        lambda g: tuple(np.squeeze(part, axis=axis) for part in np.split(g, n, axis=axis)),
        "stack",
    )


def gather(table, ids) -> Tensor:
    """Rows ``table[ids]``; the backward pass scatter-adds into the selected rows."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], (table,), rule, "gather")


# ---------------------------------------------------------------- reductions

def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    y = np.sum(a.data, axis=axis, dtype=np.float64).astype(a.data.dtype)

    def rule(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)

    return _result(np.asarray(y), (a,), rule, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    y = np.mean(a.data, axis=axis, dtype=np.float64).astype(a.data.dtype)

    def rule(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).astype(a.data.dtype),)

    return _result(np.asarray(y), (a,), rule, "mean")


def max(a, axis: int | None = None) -> Tensor:  # noqa: A001
    """Max reduction; ties route the gradient to the first maximal index."""
    a = as_tensor(a)
    if a.data.size == 0:
        raise ShapeError("max: empty input")
    if axis is None:
        flat = int(np.argmax(a.data))

        def rule(g):
            full = np.zeros_like(a.data)
            full.reshape(-1)[flat] = g
            return (full,)

        return _result(np.asarray(a.data.reshape(-1)[flat]), (a,), rule, "max")

    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    y = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def rule(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _result(y, (a,), rule, "max")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True, dtype=np.float64).astype(a.data.dtype)

    def rule(g):
        dot = np.sum(g * s, axis=axis, keepdims=True, dtype=np.float64).astype(s.dtype)
        return (s * (g - dot),)

    return _result(s, (a,), rule, "softmax")


def l2_norm(a) -> Tensor:
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data.astype(np.float64) ** 2)).astype(a.data.dtype)
    if n == 0:
        raise NumericError("l2_norm: zero vector")
    return _result(np.asarray(n), (a,), lambda g: (g * a.data / n,), "l2_norm")


def cosine(u, v) -> Tensor:
    """Cosine similarity of two vectors; a zero-norm side is an error."""
    u, v = as_tensor(u), as_tensor(v)
    if u.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine: expected equal-length vectors, got {u.shape} and {v.shape}")
    u64, v64 = u.data.astype(np.float64), v.data.astype(np.float64)
    nu, nv = np.linalg.norm(u64), np.linalg.norm(v64)
    if nu == 0 or nv == 0:
        raise NumericError("cosine: zero-norm representation")
    c = float(u64 @ v64) / (nu * nv)
    dtype = np.result_type(u.data, v.data)

    def rule(g):
        du = g * (v64 / (nu * nv) - c * u64 / nu**2)
        dv = g * (u64 / (nu * nv) - c * v64 / nv**2)
        return du.astype(u.data.dtype), dv.astype(v.data.dtype)

    return _result(np.asarray(c, dtype=dtype), (u, v), rule, "cosine")


# ---------------------------------------------------------------- convolution

def conv2d(x, filters) -> Tensor:
    """Valid 2-D cross-correlation of a single-channel image.

    ``x`` is (H, W), ``filters`` is (F, fh, fw); the output is
    (H - fh + 1, W - fw + 1, F).
    """
    x, filters = as_tensor(x), as_tensor(filters)
    if x.ndim != 2 or filters.ndim != 3:
        raise ShapeError(f"conv2d: expected image (H, W) and filters (F, fh, fw), got {x.shape} and {filters.shape}")
    H, W = x.shape
    F, fh, fw = filters.shape
    if fh > H or fw > W:
        raise ShapeError(f"conv2d: filter {filters.shape[1:]} larger than image {x.shape}")
    oh, ow = H - fh + 1, W - fw + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (fh, fw))  # (oh, ow, fh, fw)
    cols = windows.reshape(oh * ow, fh * fw)
    kernel = filters.data.reshape(F, fh * fw)
    y = (cols @ kernel.T).reshape(oh, ow, F)

    def rule(g):
        g2 = g.reshape(oh * ow, F)
        dkernel = (g2.T @ cols).reshape(F, fh, fw)
        dcols = (g2 @ kernel).reshape(oh, ow, fh, fw)
        dx = np.zeros_like(x.data)
        for i in range(fh):
            for j in range(fw):
                dx[i : i + oh, j : j + ow] += dcols[:, :, i, j]
        return dx, dkernel

    return _result(y, (x, filters), rule, "conv2d")


# ---------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_rule is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype).reshape(parent.shape)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg.copy()
