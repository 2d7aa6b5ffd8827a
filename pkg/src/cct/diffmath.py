"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every value is a float64 matrix of shape ``(rows, cols)``; vectors are
``(1, n)`` or ``(n, 1)`` and scalars are ``(1, 1)``. Binary elementwise ops
broadcast a row vector, a column vector or a scalar against a matrix and
nothing else.

Each op records its parents and a closure that pushes the upstream gradient
back to them. ``Tensor.backward`` orders the recorded graph topologically and
runs each closure once.
"""

from __future__ import annotations

import numpy as np

LOG_EPS = 1e-12
NORM_EPS = 1e-8


class ShapeError(ValueError):
    pass


class BackwardError(RuntimeError):
    pass


def _as_array(data):
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def _broadcast_ok(a, b):
    for x, y in zip(a, b):
        if x != y and x != 1 and y != 1:
            return False
    return True


def _unbroadcast(grad, shape):
    # sum over the axes a row/column/scalar operand was stretched along
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, _parents=(), op="leaf"):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 and data.ndim == 2 else _as_array(data)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad and not _parents else None
        self.op = op
        self._parents = _parents
        self._backward = None
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self):
        return transpose(self)

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data.copy())

    def is_leaf(self):
        return not self._parents

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------
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
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- reverse pass --------------------------------------------------------
    def backward(self):
        if self.shape != (1, 1):
            raise BackwardError(f"backward() needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise BackwardError("backward() already ran on this graph; rebuild it first")
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones((1, 1))}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            if node._consumed:
                raise BackwardError(f"graph through {node.op!r} was already differentiated")
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._consumed = True
            node._backward = None
        self._consumed = True


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op):
    rg = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg, _parents=parents if rg else (), op=op)
    if rg:
        out._backward = backward
    return out


# -- linear algebra ----------------------------------------------------------
def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _node(ad @ bd, (a, b), back, "matmul")


def transpose(a):
    a = _wrap(a)
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def trace(a):
    a = _wrap(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace needs a square matrix, got {a.shape}")
    n = a.shape[0]
    return _node(np.array([[np.trace(a.data)]]), (a,), lambda g: (g[0, 0] * np.eye(n),), "trace")


# -- elementwise -------------------------------------------------------------
def _binary(a, b, name):
    a, b = _wrap(a), _wrap(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"{name} shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b):
    a, b = _binary(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _binary(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    """Hadamard product (with row/column/scalar broadcasting)."""
    a, b = _binary(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _node(ad * bd, (a, b), back, "mul")


def div(a, b):
    a, b = _binary(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _node(out, (a, b), back, "div")


def scale(a, c):
    a = _wrap(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def log(a, eps=LOG_EPS):
    """Natural log of ``a + eps``."""
    a = _wrap(a)
    shifted = a.data + eps
    return _node(np.log(shifted), (a,), lambda g: (g / shifted,), "log")


def exp(a):
    a = _wrap(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def tanh(a):
    a = _wrap(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a):
    a = _wrap(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def square(a):
    a = _wrap(a)
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def sqrt(a):
    a = _wrap(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


# -- reductions --------------------------------------------------------------
def row_sum(a):
    """Sum across each row -> column vector (n, 1)."""
    a = _wrap(a)
    cols = a.shape[1]
    return _node(a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g, cols, axis=1),), "row_sum")


def col_sum(a):
    a = _wrap(a)
    rows = a.shape[0]
    return _node(a.data.sum(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g, rows, axis=0),), "col_sum")


def total(a):
    a = _wrap(a)
    shape = a.shape
    return _node(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum")


def mean(a):
    a = _wrap(a)
    shape = a.shape
    n = a.data.size
    return _node(np.array([[a.data.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] / n),), "mean")


# -- row-structured ops --------------------------------------------------------
def softmax_rows(logits):
    a = _wrap(logits)
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"softmax_rows needs a non-empty matrix, got {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _node(p, (a,), back, "softmax")


def log_softmax_rows(logits):
    a = _wrap(logits)
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _node(out, (a,), back, "log_softmax")


def normalize_rows(a, eps=NORM_EPS):
    """Divide each row by ``max(||row||, eps)``."""
    a = _wrap(a)
    x = a.data
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    clipped = norms <= eps
    denom = np.where(clipped, eps, norms)
    y = x / denom

    def back(g):
        proj = (g * y).sum(axis=1, keepdims=True)
        gx = (g - np.where(clipped, 0.0, y * proj)) / denom
        return (gx,)

    return _node(y, (a,), back, "normalize")


def row_normalize(a, eps=LOG_EPS):
    """Divide each entry by its row sum (plus ``eps``)."""
    a = _wrap(a)
    x = a.data
    s = x.sum(axis=1, keepdims=True) + eps
    y = x / s

    def back(g):
        return ((g - (g * y).sum(axis=1, keepdims=True)) / s,)

    return _node(y, (a,), back, "row_normalize")


def concat_rows(parts):
    parts = [_wrap(p) for p in parts]
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows column mismatch: {[p.shape for p in parts]}")
    sizes = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[sizes[i]:sizes[i + 1]] for i in range(len(parts)))

    return _node(np.vstack([p.data for p in parts]), tuple(parts), back, "concat_rows")


def take_rows(a, index):
    a = _wrap(a)
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), back, "take_rows")


# -- gradient checking ---------------------------------------------------------
def numerical_grad(f, x, h=1e-4):
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(Tensor(x.copy())).item()
        x[idx] = orig - h
        fm = f(Tensor(x.copy())).item()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def analytic_grad(f, x):
    leaf = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    out = f(leaf)
    out.backward()
    return leaf.grad


def grad_check(f, x, h=1e-4):
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a Tensor to a scalar Tensor. The error for each coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = _as_array(x)
    ga = analytic_grad(f, x)
    gn = numerical_grad(f, x, h)
    denom = np.maximum(1.0, np.maximum(np.abs(ga), np.abs(gn)))
    return float(np.max(np.abs(ga - gn) / denom))
