"""Dense tensors with reverse-mode automatic differentiation.

The graph is built define-by-run: every differentiable op records its
parents and a closure that pushes adjoints backwards. ``Tensor.backward``
replays those closures in reverse topological order. Everything is backed
by numpy arrays; float32 is the training default, float64 is used by the
verification suites.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

DEFAULT_DTYPE = np.float32

# When enabled every op output is checked for NaN/Inf. Turned on by the
# test suite and the `verify` subcommand.
CHECK_FINITE = False

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / sampling)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def check_finite(enabled: bool = True):
    global CHECK_FINITE
    prev = CHECK_FINITE
    CHECK_FINITE = enabled
    try:
        yield
    finally:
        CHECK_FINITE = prev


def _assert_finite(data: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    # make ndarray binary ops defer to our reflected operators instead of
    # silently building object arrays
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _wrap(other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other))

    def _wrap_like(self, other) -> "Tensor":
        """Wrap a constant; scalars adopt this tensor's float dtype."""
        if isinstance(other, Tensor):
            return other
        arr = np.asarray(other)
        if arr.ndim == 0 and np.issubdtype(self.data.dtype, np.floating) \
                and arr.dtype != self.data.dtype:
            arr = arr.astype(self.data.dtype)
        return Tensor(arr)

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Iterable["Tensor"],
                 backward: Callable[[np.ndarray], None], op: str) -> "Tensor":
        _assert_finite(data, op)
        out = cls(data)
        parents = tuple(parents)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
            out._op = op
        return out

    # -- basic introspection ---------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    # -- elementwise arithmetic --------------------------------------------

    def __add__(self, other):
        other = self._wrap_like(other)
        data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._from_op(data, (self, other), backward, "add")

    def __sub__(self, other):
        other = self._wrap_like(other)
        data = self.data - other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return Tensor._from_op(data, (self, other), backward, "sub")

    def __mul__(self, other):
        other = self._wrap_like(other)
        data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._from_op(data, (self, other), backward, "mul")

    def __truediv__(self, other):
        other = self._wrap_like(other)
        data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data ** 2), other.shape))

        return Tensor._from_op(data, (self, other), backward, "div")

    def __neg__(self):
        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)

        return Tensor._from_op(-self.data, (self,), backward, "neg")

    def __radd__(self, other):
        return self._wrap_like(other) + self

    def __rsub__(self, other):
        return self._wrap_like(other) - self

    def __rmul__(self, other):
        return self._wrap_like(other) * self

    def __rtruediv__(self, other):
        return self._wrap_like(other) / self

    def __pow__(self, exponent: float):
        data = self.data ** exponent

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._from_op(data, (self,), backward, "pow")

    # -- nonlinearities ------------------------------------------------------

    def relu(self):
        data = np.maximum(self.data, 0)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * (self.data > 0))

        return Tensor._from_op(data, (self,), backward, "relu")

    def exp(self):
        data = np.exp(self.data)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * data)

        return Tensor._from_op(data, (self,), backward, "exp")

    def log(self):
        data = np.log(self.data)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g / self.data)

        return Tensor._from_op(data, (self,), backward, "log")

    def sqrt(self):
        return self ** 0.5

    def softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            if self.requires_grad:
                inner = (g * y).sum(axis=axis, keepdims=True)
                self._accumulate(y * (g - inner))

        return Tensor._from_op(y, (self,), backward, "softmax")

    def log_softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        y = shifted - lse

        def backward(g):
            if self.requires_grad:
                self._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

        return Tensor._from_op(y, (self,), backward, "log_softmax")

    # -- shape manipulation ---------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.shape))

        return Tensor._from_op(data, (self,), backward, "reshape")

    def transpose(self, axes: tuple[int, ...]):
        data = self.data.transpose(axes)
        inverse = np.argsort(axes)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inverse))

        return Tensor._from_op(data, (self,), backward, "transpose")

    def swap_last_axes(self):
        order = tuple(range(self.ndim - 2)) + (self.ndim - 1, self.ndim - 2)
        return self.transpose(order)

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if self.requires_grad:
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.shape).copy())

        return Tensor._from_op(data, (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- linear algebra ----------------------------------------------------

    def matmul(self, other: "Tensor"):
        other = Tensor._wrap(other)
        if self.shape[-1] != other.shape[-2 if other.ndim > 1 else 0]:
            raise ValueError(
                f"matmul inner dims mismatch: {self.shape} @ {other.shape}")
        data = np.matmul(self.data, other.data)

        def backward(g):
            if self.requires_grad:
                ga = np.matmul(g, np.swapaxes(other.data, -1, -2))
                self._accumulate(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.matmul(np.swapaxes(self.data, -1, -2), g)
                other._accumulate(_unbroadcast(gb, other.shape))

        return Tensor._from_op(data, (self, other), backward, "matmul")

    def __matmul__(self, other):
        return self.matmul(other)

    # -- misc -----------------------------------------------------------

    def select_columns(self, index: np.ndarray):
        """Pick one column per row: out[i] = self[i, index[i]]."""
        rows = np.arange(self.shape[0])
        data = self.data[rows, index]

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, (rows, index), g)
                self._accumulate(full)

        return Tensor._from_op(data, (self,), backward, "select_columns")

    # -- backward pass -------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss down to every leaf."""
        if self.size != 1:
            raise ValueError("backward() requires a scalar loss node")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(value, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def parameter(data, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- spec-level elementwise dispatcher --------------------------------------

_ELEMENTWISE = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "hadamard": lambda a, b: a * b,
    "scale": lambda a, b: a * b,
    "relu": lambda a, _b: a.relu(),
}


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Pointwise op on exactly-matching dims (or a scalar second operand)."""
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op '{op}'")
    a = as_tensor(a)
    if op != "relu":
        b = as_tensor(b)
        if b.size != 1 and b.shape != a.shape:
            raise ValueError(
                f"elementwise '{op}' dims mismatch: {a.shape} vs {b.shape}")
    return _ELEMENTWISE[op](a, b)


# -- batch normalization ----------------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class BatchNormState:
    """Running statistics for one feature-normalization layer."""

    def __init__(self, dim: int, dtype=DEFAULT_DTYPE):
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)

    def copy(self) -> "BatchNormState":
        out = BatchNormState(len(self.running_mean), dtype=self.running_mean.dtype)
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


def batch_norm(h: Tensor, state: BatchNormState, gamma: Tensor, beta: Tensor,
               training: bool) -> Tensor:
    """Normalize a [b, d] activation per feature.

    Training mode normalizes by batch statistics and updates the running
    stats in place; inference mode is a fixed affine map of the running
    stats.
    """
    if training:
        if h.shape[0] < 2:
            raise ValueError("batch_norm training mode requires batch size >= 2")
        mu = h.mean(axis=0, keepdims=True)
        var = ((h - mu) ** 2).mean(axis=0, keepdims=True)
        norm = (h - mu) / ((var + BN_EPS) ** 0.5)
        m = BN_MOMENTUM
        state.running_mean[...] = m * state.running_mean + (1 - m) * mu.data[0]
        state.running_var[...] = m * state.running_var + (1 - m) * var.data[0]
    else:
        norm = (h - state.running_mean) / np.sqrt(state.running_var + BN_EPS)
    return norm * gamma + beta
