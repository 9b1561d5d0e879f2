"""Reverse-mode differentiation over float64 ndarrays.

Deliberately small: only the primitives the model and losses actually use
(matmul, transpose, row softmax, row L2-normalization, elementwise
add/mul/exp/log/relu/clip, concatenation, gathers, and sum reductions).
Each primitive carries its own backward rule and is gradient-checked in the
test suite against central finite differences.

A :class:`Var` owns a value and, after :func:`backward`, the adjoint of the
scalar root with respect to that value. The recorded graph is the set of
``_parents`` links; replaying it in reverse topological order accumulates one
adjoint per node. Leaves that do not feed the root keep a zero adjoint (see
:func:`gradients`).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import linalg
from .exceptions import ShapeMismatchError, ZeroRowError


class Var:
    """Node in the differentiation graph: a value plus an adjoint slot."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, _parents: tuple = (), _backward: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # operator sugar; all route through the module-level primitives
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_var(other), -1.0))

    def __rsub__(self, other):
        return add(as_var(other), mul(self, -1.0))

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("divide by a constant scalar, not a Var")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _accumulate(node: Var, g: np.ndarray) -> None:
    node.grad = g if node.grad is None else node.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value + b.value, (a, b))

    def bw():
        _accumulate(a, _unbroadcast(out.grad, a.value.shape))
        _accumulate(b, _unbroadcast(out.grad, b.value.shape))

    out._backward = bw
    return out


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value * b.value, (a, b))

    def bw():
        _accumulate(a, _unbroadcast(out.grad * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(out.grad * a.value, b.value.shape))

    out._backward = bw
    return out


def vexp(a) -> Var:
    a = as_var(a)
    out = Var(np.exp(a.value), (a,))

    def bw():
        _accumulate(a, out.grad * out.value)

    out._backward = bw
    return out


def vlog(a) -> Var:
    a = as_var(a)
    out = Var(np.log(a.value), (a,))

    def bw():
        _accumulate(a, out.grad / a.value)

    out._backward = bw
    return out


def relu(a) -> Var:
    a = as_var(a)
    out = Var(np.maximum(a.value, 0.0), (a,))

    def bw():
        _accumulate(a, out.grad * (a.value > 0.0))

    out._backward = bw
    return out


def clip_min(a, floor: float) -> Var:
    """max(a, floor); gradient flows only where a exceeds the floor."""
    a = as_var(a)
    out = Var(np.maximum(a.value, floor), (a,))

    def bw():
        _accumulate(a, out.grad * (a.value > floor))

    out._backward = bw
    return out


# --- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeMismatchError("matmul operands must be 2-D")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {a.value.shape} by {b.value.shape}")
    out = Var(a.value @ b.value, (a, b))

    def bw():
        _accumulate(a, out.grad @ b.value.T)
        _accumulate(b, a.value.T @ out.grad)

    out._backward = bw
    return out


def transpose(a) -> Var:
    a = as_var(a)
    out = Var(a.value.T, (a,))

    def bw():
        _accumulate(a, out.grad.T)

    out._backward = bw
    return out


def softmax_rows(a) -> Var:
    """Row softmax; backward uses y * (g - sum(g * y))."""
    a = as_var(a)
    y = linalg.softmax_rows(a.value)
    out = Var(y, (a,))

    def bw():
        g = out.grad
        s = (g * y).sum(axis=1, keepdims=True)
        _accumulate(a, y * (g - s))

    out._backward = bw
    return out


def l2_normalize_rows(a) -> Var:
    """Row L2 normalization; raises ZeroRowError on directionless rows."""
    a = as_var(a)
    norms = linalg.row_norms(a.value)
    if np.any(norms <= linalg.ZERO_NORM_EPS):
        bad = int(np.argmax(norms <= linalg.ZERO_NORM_EPS))
        raise ZeroRowError(f"row {bad} has norm {norms[bad]:.3e}")
    n = norms[:, None]
    y = a.value / n
    out = Var(y, (a,))

    def bw():
        g = out.grad
        s = (g * y).sum(axis=1, keepdims=True)
        _accumulate(a, (g - y * s) / n)

    out._backward = bw
    return out


# --- structure ----------------------------------------------------------------


def concat_rows(parts: Sequence) -> Var:
    parts = [as_var(p) for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=0), tuple(parts))
    offsets = np.cumsum([0] + [p.value.shape[0] for p in parts])

    def bw():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, out.grad[lo:hi])

    out._backward = bw
    return out


def gather_rows(a, idx) -> Var:
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = Var(a.value[idx], (a,))

    def bw():
        g = np.zeros_like(a.value)
        np.add.at(g, idx, out.grad)
        _accumulate(a, g)

    out._backward = bw
    return out


def gather_cols(a, idx) -> Var:
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = Var(a.value[:, idx], (a,))

    def bw():
        g = np.zeros_like(a.value)
        np.add.at(g, (slice(None), idx), out.grad)
        _accumulate(a, g)

    out._backward = bw
    return out


def vsum(a, axis: int | None = None, keepdims: bool = False) -> Var:
    a = as_var(a)
    out = Var(a.value.sum(axis=axis, keepdims=keepdims), (a,))

    def bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.value.shape).copy())

    out._backward = bw
    return out


def vmean(a, axis: int | None = None) -> Var:
    a = as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return vsum(a, axis=axis) * (1.0 / n)


def zero_scalar() -> Var:
    """A constant 0.0 contribution: a valid loss term with zero gradients."""
    return Var(0.0)


# --- backward pass ---------------------------------------------------------------


def _topo_order(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
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
    return order


def backward(root: Var) -> None:
    """Populate ``grad`` on every node reachable from a scalar root."""
    if root.value.shape != ():
        raise ShapeMismatchError("backward requires a scalar root")
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones(())
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


def gradients(loss: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Adjoint of ``loss`` for each leaf; exact zeros for unused leaves."""
    backward(loss)
    return [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for leaf in wrt
    ]


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element.

    Independent of the tape: only calls ``f`` on perturbed copies. Used as the
    oracle side of every gradient check.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return g
