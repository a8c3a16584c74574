"""Tape-based reverse-mode differentiation over a small set of array primitives.

Every value is a float64 numpy array wrapped in a :class:`Var`. Operations
record their parents and a backward closure; :meth:`Var.backward` walks the
graph in reverse topological order and accumulates gradients.

Supported primitives: ``+ - * /`` (with numpy broadcasting), negation,
matrix product, :func:`leaky_relu`, :func:`square`, :func:`log`, :func:`exp`,
:func:`sigmoid`, :func:`clip`, :func:`concat`, 2-D slicing and the
reductions :meth:`Var.sum` / :meth:`Var.mean`. Anything else raises
:class:`~laser.errors.ConstructionError`.
"""

from __future__ import annotations

from numbers import Real
from typing import Callable, Iterable, Sequence

import numpy as np

from laser.errors import ConstructionError

_Backward = Callable[[np.ndarray], Sequence[np.ndarray]]


def _as_array(value) -> np.ndarray:
    if isinstance(value, np.ndarray):
        return value.astype(np.float64, copy=False)
    if isinstance(value, (Real, np.floating, np.integer)) and not isinstance(value, bool):
        return np.asarray(value, dtype=np.float64)
    raise ConstructionError(f"unsupported operand of type {type(value).__name__}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A differentiable array node."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")
    __array_ufunc__ = None  # keep numpy from swallowing Var operands

    def __init__(self, value, _parents: tuple["Var", ...] = (), _backward: _Backward | None = None,
                 requires_grad: bool | None = None):
        self.value = _as_array(value)
        self.grad: np.ndarray | None = None
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in _parents) if _parents else True
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    # arithmetic -----------------------------------------------------------

    def __add__(self, other) -> Var:
        other = _lift(other)
        a, b = self.value, other.value
        return Var(a + b, (self, other), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other) -> Var:
        other = _lift(other)
        a, b = self.value, other.value
        return Var(a - b, (self, other), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))

    def __rsub__(self, other) -> Var:
        return _lift(other) - self

    def __mul__(self, other) -> Var:
        other = _lift(other)
        a, b = self.value, other.value
        return Var(a * b, (self, other), lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other) -> Var:
        other = _lift(other)
        a, b = self.value, other.value
        return Var(
            a / b,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
        )

    def __rtruediv__(self, other) -> Var:
        return _lift(other) / self

    def __neg__(self) -> Var:
        return Var(-self.value, (self,), lambda g: (-g,))

    def __matmul__(self, other) -> Var:
        other = _lift(other)
        a, b = self.value, other.value
        if a.ndim != 2 or b.ndim != 2:
            raise ConstructionError("matmul is defined for 2-D operands only")
        need_a, need_b = self.requires_grad, other.requires_grad
        return Var(a @ b, (self, other), lambda g: (g @ b.T if need_a else None, a.T @ g if need_b else None))

    def __rmatmul__(self, other) -> Var:
        return _lift(other) @ self

    def __pow__(self, other):
        raise ConstructionError("power is not a supported primitive; use square()")

    def __getitem__(self, index) -> Var:
        # Basic 2-D slicing only: x[rows, cols] with slice objects.
        if not (isinstance(index, tuple) and len(index) == 2 and all(isinstance(i, slice) for i in index)):
            raise ConstructionError("only 2-D slices x[a:b, c:d] are supported")
        a = self.value

        def backward(g):
            out = np.zeros_like(a)
            out[index] = g
            return (out,)

        return Var(a[index], (self,), backward)

    # reductions -------------------------------------------------------------

    def sum(self, axis: int | None = None) -> Var:
        a = self.value
        if axis is None:
            return Var(a.sum(), (self,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
        return Var(a.sum(axis=axis), (self,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),))

    def mean(self, axis: int | None = None) -> Var:
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis) * (1.0 / count)

    # backward ---------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``node.grad`` for every ancestor.

        ``self`` must be a scalar.
        """
        if self.value.size != 1:
            raise ConstructionError("backward() requires a scalar output")
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
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
                if id(parent) not in seen:
                    stack.append((parent, False))

        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is None or node.grad is None or not node.requires_grad:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def _lift(value) -> Var:
    return value if isinstance(value, Var) else Var(value, requires_grad=False)


def constant(value) -> Var:
    """A node that never receives a gradient (data, fixed noise)."""
    return Var(value, requires_grad=False)


def leaky_relu(x, slope: float):
    """``x`` where ``x >= 0`` and ``slope * x`` elsewhere; works on arrays and Vars."""
    # max(x, slope*x) equals the piecewise form because 0 < slope < 1
    if not isinstance(x, Var):
        x = np.asarray(x, dtype=np.float64)
        return np.maximum(x, slope * x)
    a = x.value
    out = np.maximum(a, slope * a)

    def backward(g):
        scale = (a >= 0).astype(np.float64)
        scale *= 1.0 - slope
        scale += slope
        return (g * scale,)

    return Var(out, (x,), backward)


def square(x: Var) -> Var:
    x = _lift(x)
    a = x.value
    return Var(a * a, (x,), lambda g: (2.0 * a * g,))


def log(x: Var) -> Var:
    x = _lift(x)
    a = x.value
    return Var(np.log(a), (x,), lambda g: (g / a,))


def exp(x: Var) -> Var:
    x = _lift(x)
    out = np.exp(x.value)
    return Var(out, (x,), lambda g: (g * out,))


def sigmoid(x: Var) -> Var:
    x = _lift(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return Var(out, (x,), lambda g: (g * out * (1.0 - out),))


def clip(x: Var, lo: float, hi: float) -> Var:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    x = _lift(x)
    a = x.value
    inside = ((a >= lo) & (a <= hi)).astype(np.float64)
    return Var(np.clip(a, lo, hi), (x,), lambda g: (g * inside,))


def concat(parts: Iterable, axis: int = 1) -> Var:
    nodes = [_lift(p) for p in parts]
    values = [n.value for n in nodes]
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(nodes)))

    return Var(np.concatenate(values, axis=axis), tuple(nodes), backward)
