"""Small dense-array automatic differentiation on top of numpy.

Every operation records its parents and a backward closure. ``backward``
walks the recorded graph in reverse topological order. Forward-mode
derivatives are obtained by propagating tangents with the same taped
operations (see :mod:`strode.nn`), so reverse mode can be run over a
tangent graph to get mixed second derivatives.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


class ContractError(ValueError):
    """Raised when an operation is called outside its contract."""


class DimensionError(ContractError):
    """Raised on incompatible array shapes."""


def _as_array(x) -> np.ndarray:
    if type(x) is np.ndarray and x.dtype == np.float64 and x.ndim <= 2:
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 2:
        raise DimensionError(f"DiffValue supports at most 2-D data, got shape {arr.shape}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class DiffValue:
    """A float64 array that remembers how it was computed.

    ``grad`` holds the reverse-mode adjoint after :meth:`backward`.
    ``tangent`` optionally holds a forward-mode directional derivative
    (itself a :class:`DiffValue`, so it stays on the tape).
    """

    __slots__ = ("data", "grad", "tangent", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = _as_array(data)
        self.grad = None
        self.tangent = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # -- construction helpers -------------------------------------------
    @staticmethod
    def lift(x) -> "DiffValue":
        return x if x.__class__ is DiffValue else DiffValue(x)

    @classmethod
    def _constant(cls, data) -> "DiffValue":
        # untracked result of an operation; skips argument handling in __init__
        v = cls.__new__(cls)
        v.data = _as_array(data)
        v.grad = v.tangent = v.name = v._backward = None
        v.requires_grad = False
        v._parents = ()
        return v

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "DiffValue":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "DiffValue":
        return DiffValue(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffValue(shape={self.shape}{tag}, data={self.data!r})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic ------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    # -- reverse mode ----------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every node that feeds this scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar output, got shape {self.shape}")
        order = _topological_order(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad += _unbroadcast(np.asarray(g, dtype=np.float64), parent.data.shape)


def _topological_order(root: DiffValue) -> list:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (e.g. for finite differences)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _make(data, parents: tuple, backward) -> DiffValue:
    if not _GRAD_ENABLED or not any(p.requires_grad for p in parents):
        return DiffValue._constant(data)
    return DiffValue(data, requires_grad=True, _parents=parents, _backward=backward)


# -- elementwise binary ------------------------------------------------------
def add(a, b) -> DiffValue:
    a, b = DiffValue.lift(a), DiffValue.lift(b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> DiffValue:
    a, b = DiffValue.lift(a), DiffValue.lift(b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> DiffValue:
    a, b = DiffValue.lift(a), DiffValue.lift(b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> DiffValue:
    a, b = DiffValue.lift(a), DiffValue.lift(b)
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def neg(a) -> DiffValue:
    a = DiffValue.lift(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> DiffValue:
    a = DiffValue.lift(a)
    return _make(a.data ** exponent, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def matmul(a, b) -> DiffValue:
    a, b = DiffValue.lift(a), DiffValue.lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def maximum(a, floor: float) -> DiffValue:
    """``max(a, floor)`` with zero gradient where the floor is active."""
    a = DiffValue.lift(a)
    mask = a.data > floor
    return _make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


def clip(a, lo: float, hi: float) -> DiffValue:
    a = DiffValue.lift(a)
    mask = (a.data > lo) & (a.data < hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


# -- elementwise unary -------------------------------------------------------
def exp(a) -> DiffValue:
    a = DiffValue.lift(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> DiffValue:
    a = DiffValue.lift(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a) -> DiffValue:
    a = DiffValue.lift(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def tanh(a) -> DiffValue:
    a = DiffValue.lift(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> DiffValue:
    a = DiffValue.lift(a)
    out = _sigmoid_np(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> DiffValue:
    a = DiffValue.lift(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _sigmoid_np(x),))


def relu(a) -> DiffValue:
    a = DiffValue.lift(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.01) -> DiffValue:
    a = DiffValue.lift(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def relu_grad(a, slope: float = 0.0) -> DiffValue:
    """Derivative of (leaky) ReLU as a constant; it is piecewise flat."""
    a = DiffValue.lift(a)
    return DiffValue(np.where(a.data > 0, 1.0, slope))


# -- reductions and shape ----------------------------------------------------
def sum_(a, axis=None, keepdims: bool = False) -> DiffValue:
    a = DiffValue.lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> DiffValue:
    a = DiffValue.lift(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> DiffValue:
    a = DiffValue.lift(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> DiffValue:
    a = DiffValue.lift(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def getitem(a, index) -> DiffValue:
    a = DiffValue.lift(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward)


def concat(values, axis: int = -1) -> DiffValue:
    values = [DiffValue.lift(v) for v in values]
    out = np.concatenate([v.data for v in values], axis=axis)
    splits = np.cumsum([v.data.shape[axis] for v in values])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(values), backward)


def repeat_rows(a, repeats: int) -> DiffValue:
    """Repeat each row ``repeats`` times (``np.repeat`` along axis 0)."""
    a = DiffValue.lift(a)
    out = np.repeat(a.data, repeats, axis=0)

    def backward(g):
        return (g.reshape(a.shape[0], repeats, *a.shape[1:]).sum(axis=1),)

    return _make(out, (a,), backward)


def logsumexp(a, axis: int = -1) -> DiffValue:
    a = DiffValue.lift(a)
    peak = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(total) + peak).squeeze(axis)

    def backward(g):
        return (np.expand_dims(g, axis) * shifted / total,)

    return _make(out, (a,), backward)


def parameter(data, name: str | None = None) -> DiffValue:
    """A trainable leaf."""
    return DiffValue(np.array(data, dtype=np.float64), requires_grad=True, name=name)
