"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that participates in training records itself on an implicit
tape (the graph of ``_parents`` links plus per-node backward rules).
``Tensor.backward()`` topologically sorts that tape and replays it once in
reverse, accumulating gradients into ``.grad`` buffers.

All results are checked for NaN/Inf immediately; a non-finite value raises
instead of propagating.
"""

from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value produced by '{op}'")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _check_finite(_as_array(data), "tensor")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=np.float64), requires_grad)

    @staticmethod
    def ones(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=np.float64), requires_grad)

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = _check_finite(data, op)
        out.grad = None
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = None
        out._op = op
        return out

    # -- basic introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- tape ------------------------------------------------------------------

    def tape(self) -> list["Tensor"]:
        """Recorded operations reachable from this node, inputs before outputs."""
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    def backward(self) -> None:
        """Reverse-replay the tape from this scalar, accumulating gradients."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        order = self.tape()
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic --------------------------------------------------

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def __add__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        out = Tensor._result(self.data + other.data, (self, other), "add")
        if out.requires_grad:
            def backward(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(g, b.shape))
            out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor._result(-self.data, (self,), "neg")
        if out.requires_grad:
            def backward(g, a=self):
                a._accumulate(-g)
            out._backward = backward
        return out

    def __sub__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        out = Tensor._result(self.data - other.data, (self, other), "sub")
        if out.requires_grad:
            def backward(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(-g, b.shape))
            out._backward = backward
        return out

    def __rsub__(self, other) -> "Tensor":
        return Tensor._lift(other) - self

    def __mul__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        out = Tensor._result(self.data * other.data, (self, other), "mul")
        if out.requires_grad:
            def backward(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g * b.data, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(g * a.data, b.shape))
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        out = Tensor._result(self.data / other.data, (self, other), "div")
        if out.requires_grad:
            def backward(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g / b.data, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))
            out._backward = backward
        return out

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor._lift(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported")
        out = Tensor._result(self.data ** exponent, (self,), "pow")
        if out.requires_grad:
            def backward(g, a=self, p=exponent):
                a._accumulate(g * p * a.data ** (p - 1))
            out._backward = backward
        return out

    # -- unary math ----------------------------------------------------------------

    def exp(self) -> "Tensor":
        out = Tensor._result(np.exp(self.data), (self,), "exp")
        if out.requires_grad:
            def backward(g, a=self, y=out.data):
                a._accumulate(g * y)
            out._backward = backward
        return out

    def log(self) -> "Tensor":
        out = Tensor._result(np.log(self.data), (self,), "log")
        if out.requires_grad:
            def backward(g, a=self):
                a._accumulate(g / a.data)
            out._backward = backward
        return out

    def relu(self) -> "Tensor":
        out = Tensor._result(np.maximum(self.data, 0.0), (self,), "relu")
        if out.requires_grad:
            mask = self.data > 0.0
            def backward(g, a=self, m=mask):
                a._accumulate(g * m)
            out._backward = backward
        return out

    def sigmoid(self) -> "Tensor":
        x = self.data
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        out = Tensor._result(y, (self,), "sigmoid")
        if out.requires_grad:
            def backward(g, a=self, s=out.data):
                a._accumulate(g * s * (1.0 - s))
            out._backward = backward
        return out

    # -- reductions ------------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")
        if out.requires_grad:
            def backward(g, a=self, ax=axis, kd=keepdims):
                if ax is not None and not kd:
                    g = np.expand_dims(g, ax)
                a._accumulate(np.broadcast_to(g, a.shape).copy())
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        out = Tensor._result(self.data.mean(axis=axis, keepdims=keepdims), (self,), "mean")
        if out.requires_grad:
            def backward(g, a=self, ax=axis, kd=keepdims, n=count):
                if ax is not None and not kd:
                    g = np.expand_dims(g, ax)
                a._accumulate(np.broadcast_to(g, a.shape) / n)
            out._backward = backward
        return out

    def max(self, axis: int) -> "Tensor":
        """Reduce-max along one axis; ties route gradient to the first maximum."""
        out = Tensor._result(self.data.max(axis=axis), (self,), "max")
        if out.requires_grad:
            arg = np.argmax(self.data, axis=axis)
            def backward(g, a=self, ax=axis, idx=arg):
                dx = np.zeros_like(a.data)
                np.put_along_axis(
                    dx, np.expand_dims(idx, ax), np.expand_dims(g, ax), axis=ax
                )
                a._accumulate(dx)
            out._backward = backward
        return out

    def softmax(self, axis: int = -1) -> "Tensor":
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=axis, keepdims=True)
        out = Tensor._result(s, (self,), "softmax")
        if out.requires_grad:
            def backward(g, a=self, y=s, ax=axis):
                dot = (g * y).sum(axis=ax, keepdims=True)
                a._accumulate(y * (g - dot))
            out._backward = backward
        return out

    # -- shape manipulation -------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor._result(self.data.reshape(shape), (self,), "reshape")
        if out.requires_grad:
            def backward(g, a=self):
                a._accumulate(g.reshape(a.shape))
            out._backward = backward
        return out

    def transpose(self, axes=None) -> "Tensor":
        out = Tensor._result(np.transpose(self.data, axes), (self,), "transpose")
        if out.requires_grad:
            inv = None if axes is None else tuple(np.argsort(axes))
            def backward(g, a=self, ax=inv):
                a._accumulate(np.transpose(g, ax))
            out._backward = backward
        return out

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def take(self, indices: np.ndarray) -> "Tensor":
        """Gather rows along axis 0; backward scatter-adds into the source."""
        idx = np.asarray(indices, dtype=np.intp)
        out = Tensor._result(self.data[idx], (self,), "take")
        if out.requires_grad:
            def backward(g, a=self, i=idx):
                dx = np.zeros_like(a.data)
                np.add.at(dx, i, g)
                a._accumulate(dx)
            out._backward = backward
        return out

    def __getitem__(self, key) -> "Tensor":
        out = Tensor._result(np.asarray(self.data[key], dtype=np.float64), (self,), "getitem")
        if out.requires_grad:
            def backward(g, a=self, k=key):
                dx = np.zeros_like(a.data)
                np.add.at(dx, k, g)
                a._accumulate(dx)
            out._backward = backward
        return out

    # -- linear algebra ---------------------------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        other = Tensor._lift(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError(
                f"matmul needs 2-D operands, got {self.shape} and {other.shape}"
            )
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {self.shape} @ {other.shape}")
        out = Tensor._result(self.data @ other.data, (self, other), "matmul")
        if out.requires_grad:
            def backward(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(g @ b.data.T)
                if b.requires_grad:
                    b._accumulate(a.data.T @ g)
            out._backward = backward
        return out

    __matmul__ = matmul


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an existing axis."""
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor._result(data, tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward(g, ts=tuple(tensors), offs=offsets, ax=axis):
            for t, lo, hi in zip(ts, offs[:-1], offs[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * g.ndim
                    sl[ax] = slice(lo, hi)
                    t._accumulate(g[tuple(sl)])
        out._backward = backward
    return out


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    """Stack along a new axis."""
    data = np.stack([t.data for t in tensors], axis=axis)
    out = Tensor._result(data, tuple(tensors), "stack")
    if out.requires_grad:
        def backward(g, ts=tuple(tensors), ax=axis):
            for i, t in enumerate(ts):
                if t.requires_grad:
                    t._accumulate(np.take(g, i, axis=ax))
        out._backward = backward
    return out
