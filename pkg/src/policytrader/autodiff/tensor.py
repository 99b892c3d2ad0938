"""Array-valued reverse-mode autodiff.

Each :class:`Tensor` wraps a float64 ndarray. Operations on tensors that
require gradients record their parents and a closure that pushes the output
gradient back to them; :meth:`Tensor.backward` walks the graph in reverse
topological order.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
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
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return _make(out, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return _make(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return _make(out, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return as_tensor(other) * self ** -1.0

    def __pow__(self, exponent: float):
        exponent = float(exponent)
        out = self.data ** exponent

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1.0))

        return _make(out, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim > 2 or other.ndim > 2:
            raise ShapeError("matmul supports 1-D and 2-D operands only")
        try:
            out = self.data @ other.data
        except ValueError as exc:
            raise ShapeError(str(exc)) from None
        a, b = self.data, other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(np.multiply.outer(g, b) if b.ndim == 1 else g @ b.T)
            if other.requires_grad:
                other._accumulate(np.multiply.outer(a, g) if a.ndim == 1 else a.T @ g)

        return _make(out, (self, other), backward)

    # -- reductions and shape ------------------------------------------------

    def sum(self, axis=None):
        out = self.data.sum(axis=axis)

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape))
            else:
                self._accumulate(np.broadcast_to(np.expand_dims(g, axis), self.shape))

        return _make(out, (self,), backward)

    def mean(self, axis=None):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        try:
            out = self.data.reshape(shape)
        except ValueError as exc:
            raise ShapeError(str(exc)) from None

        def backward(g):
            self._accumulate(g.reshape(self.shape))

        return _make(out, (self,), backward)

    def __getitem__(self, index):
        out = self.data[index]

        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, index, g)
            self._accumulate(full)

        return _make(out, (self,), backward)

    # -- elementwise nonlinearities -------------------------------------------

    def tanh(self):
        out = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - out * out))

        return _make(out, (self,), backward)

    def sigmoid(self):
        out = _sigmoid(self.data)

        def backward(g):
            self._accumulate(g * out * (1.0 - out))

        return _make(out, (self,), backward)

    def exp(self):
        out = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out)

        return _make(out, (self,), backward)

    def log(self):
        out = np.log(self.data)

        def backward(g):
            self._accumulate(g / self.data)

        return _make(out, (self,), backward)


class Parameter(Tensor):
    """A trainable leaf carrying its own Adam moment accumulators."""

    __slots__ = ("adam_m", "adam_v", "step_count")

    def __init__(self, data):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(out, tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return _make(out, tuple(tensors), backward)
