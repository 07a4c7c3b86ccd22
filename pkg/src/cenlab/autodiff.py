"""A small define-by-run reverse-mode autodiff over float64 numpy arrays.

Each :class:`Tensor` is a graph node: it holds its value, the op that made
it, references to its inputs and a gradient accumulator. Broadcasting is
limited to scalar-vs-tensor and row-vs-matrix.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf", parents=(), name: str | None = None):
        self.data = np.array(data, dtype=np.float64) if op == "leaf" else data
        if op == "leaf":
            self.data.flags.writeable = False
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if (requires_grad and op == "leaf") else None
        self.op = op
        self._parents = parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False
        self.name = name

    # -- basics ---------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.op == "leaf"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def backward(self):
        backward(self)


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, op, parents, backward_fn) -> Tensor:
    req = any(p.requires_grad for p in parents)
    t = Tensor(data, requires_grad=req, op=op, parents=parents if req else ())
    if req:
        t._backward = backward_fn
    return t


def _broadcast_ok(a: tuple, b: tuple) -> bool:
    if a == b:
        return True
    if int(np.prod(a)) == 1 and len(a) <= len(b) or int(np.prod(b)) == 1 and len(b) <= len(a):
        return True
    for row, mat in ((a, b), (b, a)):
        if len(mat) == 2 and (row == (mat[1],) or row == (1, mat[1])):
            return True
    return False


def _check(op: str, a: Tensor, b: Tensor):
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) < g.ndim:
        g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    axes = tuple(k for k, s in enumerate(shape) if s == 1 and g.shape[k] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise binary ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _check("div", a, b)
    if (b.data == 0).any():
        raise ZeroDivisionError("div: denominator has zero entries")
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _node(out, "div", (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, "matmul", (a, b), bw)


# -- reductions and structure -----------------------------------------------------

def sum_(a, axis: int | None = None) -> Tensor:
    a = tensor(a)
    out = a.data.sum() if axis is None else a.data.sum(axis=axis, keepdims=True)

    def bw(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out, dtype=np.float64), "sum", (a,), bw)


def mean(a, axis: int | None = None) -> Tensor:
    a = tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / count)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [tensor(p) for p in parts]
    ax = axis % parts[0].data.ndim
    sizes = [p.shape[ax] for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=ax)
    except ValueError as e:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from e
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=ax) for k in range(len(parts)))

    return _node(out, "concat", tuple(parts), bw)


def slice_(a, idx) -> Tensor:
    a = tensor(a)
    out = np.array(a.data[idx], dtype=np.float64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(out, "slice", (a,), bw)


def reshape(a, shape) -> Tensor:
    a = tensor(a)

    def bw(g):
        return (g.reshape(a.shape),)

    return _node(a.data.reshape(shape), "reshape", (a,), bw)


def broadcast(a, shape) -> Tensor:
    """Explicitly expand a scalar or a row to ``shape``."""
    a = tensor(a)
    shape = tuple(shape)
    if not _broadcast_ok(a.shape, shape) or int(np.prod(a.shape)) > int(np.prod(shape)):
        raise ShapeError(f"broadcast: cannot expand {a.shape} to {shape}")
    src = a.data.reshape(()) if a.data.size == 1 else a.data

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.data.size != 1 else np.asarray(g.sum()).reshape(a.shape),)

    return _node(np.broadcast_to(src, shape).copy(), "broadcast", (a,), bw)


# -- elementwise unary ----------------------------------------------------------

def exp(a) -> Tensor:
    a = tensor(a)
    out = np.exp(a.data)
    return _node(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = tensor(a)
    if (a.data <= 0).any():
        raise ValueError("log: non-positive input")
    return _node(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = tensor(a)
    out = np.tanh(a.data)
    return _node(out, "tanh", (a,), lambda g: (g * (1 - out * out),))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def softplus(a) -> Tensor:
    a = tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _node(out, "softplus", (a,), lambda g: (g * _sigmoid(a.data),))


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = tensor(a)
    slope = np.where(a.data >= 0, 1.0, alpha)
    return _node(a.data * slope, "leaky_relu", (a,), lambda g: (g * slope,))


def square(a) -> Tensor:
    a = tensor(a)
    return _node(a.data * a.data, "square", (a,), lambda g: (2 * g * a.data,))


def abs_(a) -> Tensor:
    """``|a|`` with subgradient 0 at exact zeros."""
    a = tensor(a)
    return _node(np.abs(a.data), "abs", (a,), lambda g: (g * np.sign(a.data),))


# -- backward -----------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate ``d root / d leaf`` into ``leaf.grad`` for every leaf with
    ``requires_grad``. Each graph supports exactly one backward pass."""
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if root._consumed:
        raise RuntimeError("backward already ran on this graph; rebuild it (double backward is unsupported)")
    root._consumed = True
    if not root.requires_grad:
        return
    if root.is_leaf:
        root.grad = root.grad + np.ones_like(root.data)
        return
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(_topo(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
        node._backward = None
        node._parents = ()


# -- gradient checking ----------------------------------------------------------

def _leaves(point):
    return [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in point]


def gradcheck_detail(f: Callable[..., Tensor], point: Sequence[np.ndarray], h: float = 1e-5):
    """Compare reverse-mode gradients of scalar ``f(*tensors)`` to central
    differences. Returns ``(max_rel_error, skipped)`` where ``skipped`` lists
    ``(arg, flat_index)`` coordinates whose one-sided differences disagree,
    i.e. points where ``f`` is not differentiable."""
    point = [np.array(x, dtype=np.float64) for x in point]
    leaves = _leaves(point)
    backward(f(*leaves))
    worst, skipped = 0.0, []

    def value(args):
        return f(*[Tensor(a) for a in args]).item()

    f0 = value(point)
    for k, x in enumerate(point):
        ad = leaves[k].grad.reshape(-1)
        for idx in range(x.size):
            args_p = [a.copy() for a in point]
            args_m = [a.copy() for a in point]
            args_p[k].reshape(-1)[idx] += h
            args_m[k].reshape(-1)[idx] -= h
            fp, fm = value(args_p), value(args_m)
            fwd, bwd = (fp - f0) / h, (f0 - fm) / h
            if abs(fwd - bwd) > 1e-2 * max(1.0, abs(fwd), abs(bwd)):
                skipped.append((k, idx))
                continue
            fd = (fp - fm) / (2 * h)
            err = abs(ad[idx] - fd) / max(1.0, abs(ad[idx]), abs(fd))
            worst = max(worst, err)
    return worst, skipped


def gradcheck(f: Callable[..., Tensor], point: Sequence[np.ndarray], h: float = 1e-5) -> float:
    return gradcheck_detail(f, point, h)[0]
