"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor`. When any input requires a
gradient, the result records its parents and a closure mapping the upstream
gradient to per-parent gradients. :func:`backward` walks that graph once in
reverse topological order.

Broadcasting is deliberately limited to Python scalars (or size-1 tensors)
against a tensor; everything else must match exactly. Row-wise bias addition
goes through :func:`affine`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import ContractError, DomainError, ShapeError

EPS = 1e-12


class Tensor:
    """Dense float64 array that can take part in a differentiable graph."""

    __slots__ = ("values", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        arr.setflags(write=False)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.values!r}{flag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values, op, parents, backward) -> Tensor:
    out = Tensor(values)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.values.size == 1


def _sum_to(grad: np.ndarray, t: Tensor) -> np.ndarray:
    """Reduce a gradient back onto `t` when `t` was a broadcast scalar."""
    if grad.shape == t.shape:
        return grad
    return np.asarray(grad.sum()).reshape(t.shape)


def _binary_shapes(op, a: Tensor, b: Tensor):
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(op, a.shape, b.shape)


def _check_finite(op, values):
    if not np.all(np.isfinite(values)):
        raise DomainError(op, "non-finite result")


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)

    def backward(g):
        return _sum_to(g, a), _sum_to(g, b)

    return _result(a.values + b.values, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)

    def backward(g):
        return _sum_to(g, a), _sum_to(-g, b)

    return _result(a.values - b.values, "sub", (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.values, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("mul", a, b)

    def backward(g):
        return _sum_to(g * b.values, a), _sum_to(g * a.values, b)

    return _result(a.values * b.values, "mul", (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("div", a, b)
    if np.any(np.abs(b.values) < EPS):
        raise DomainError("div", "denominator below 1e-12")
    out = a.values / b.values

    def backward(g):
        return _sum_to(g / b.values, a), _sum_to(-g * out / b.values, b)

    return _result(out, "div", (a, b), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)
    _check_finite("exp", out)
    return _result(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    """Natural log with inputs in [0, 1e-12) floored to 1e-12.

    The floored region has zero gradient. Negative or NaN inputs raise.
    """
    a = as_tensor(a)
    if np.any(np.isnan(a.values)) or np.any(a.values < 0):
        raise DomainError("log", "negative or NaN input")
    floored = a.values < EPS
    x = np.where(floored, EPS, a.values)

    def backward(g):
        return (np.where(floored, 0.0, g / x),)

    return _result(np.log(x), "log", (a,), backward)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    out = np.logaddexp(0.0, x)

    def backward(g):
        return (g * special.expit(x),)

    return _result(out, "softplus", (a,), backward)


def digamma(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0):
        raise DomainError("digamma", "non-positive input")
    x = a.values

    def backward(g):
        return (g * special.polygamma(1, x),)

    return _result(special.digamma(x), "digamma", (a,), backward)


# linear algebra and reshaping

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        return g @ b.values.T, a.values.T @ g

    return _result(a.values @ b.values, "matmul", (a, b), backward)


def affine(x, w, b) -> Tensor:
    """x @ w + b with the bias vector added to every row."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if (x.values.ndim != 2 or w.values.ndim != 2 or x.shape[1] != w.shape[0]
            or b.shape != (w.shape[1],)):
        raise ShapeError("affine", x.shape, w.shape, b.shape)

    def backward(g):
        return g @ w.values.T, x.values.T @ g, g.sum(axis=0)

    return _result(x.values @ w.values + b.values, "affine", (x, w, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.values.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return _result(a.values.T, "transpose", (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _result(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def repeat_cols(a, n: int) -> Tensor:
    """Tile a length-B vector into a B x n matrix (each row constant)."""
    a = as_tensor(a)
    if a.values.ndim != 1:
        raise ShapeError("repeat_cols", a.shape)
    return matmul(reshape(a, (-1, 1)), Tensor(np.ones((1, n))))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat of zero tensors")
    ref = ts[0].shape
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
                d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ShapeError("concat", ref, t.shape)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.values for t in ts], axis=axis), "concat", ts, backward)


def take(a, index, axis: int = 0) -> Tensor:
    """Gather entries of `a` along `axis` (repeats allowed)."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(a.values)
        np.add.at(out, (slice(None),) * (axis % a.values.ndim) + (idx,), g)
        return (out,)

    return _result(np.take(a.values, idx, axis=axis), "take", (a,), backward)


# reductions

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        return (np.array(_expand(g, a.shape, axis, keepdims)),)

    return _result(out, "sum", (a,), backward)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise DomainError("mean", "empty tensor")
    n = a.size if axis is None else a.shape[axis]
    out = a.values.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        return (np.array(_expand(g, a.shape, axis, keepdims)) / n,)

    return _result(out, "mean", (a,), backward)


def max(a, axis: int = -1, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum along `axis`; the gradient goes to the first maximizing entry."""
    a = as_tensor(a)
    arg = np.argmax(a.values, axis=axis)
    out = np.take_along_axis(a.values, np.expand_dims(arg, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros_like(a.values)
        np.put_along_axis(full, np.expand_dims(arg, axis), gg, axis=axis)
        return (full,)

    return _result(out, "max", (a,), backward)


def l2norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along `axis`. Zero vectors get a zero subgradient."""
    a = as_tensor(a)
    out = np.sqrt(np.sum(a.values ** 2, axis=axis, keepdims=True))

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, gg * a.values / safe, 0.0),)

    return _result(out if keepdims else np.squeeze(out, axis=axis), "l2norm", (a,), backward)


# graph traversal

def _topological(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Populate ``.grad`` on every requires_grad leaf reachable from `root`.

    Returns a map from those leaves to their gradients. Gradients from
    multiple paths are summed. A root that does not require grad yields an
    empty map.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.values)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g
            leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return leaves


def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-4) -> float:
    """Max relative error between the autodiff gradient of `f` and central differences.

    The error for each coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ContractError(f"h={h} outside [1e-6, 1e-3]")
    x0 = np.array(point, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    out = f(leaf)
    if not np.all(np.isfinite(out.values)):
        raise DomainError("grad_check", "non-finite evaluation")
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp, xm = x0.copy().reshape(-1), x0.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError("grad_check", "non-finite evaluation")
        flat[i] = (fp - fm) / (2 * h)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
