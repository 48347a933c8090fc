"""Reverse-mode automatic differentiation on float64 numpy arrays.

Define-by-run: every op appends a node (op name, parent tensors, backward
closure) to the tensor it produces. `backward(loss)` walks the recorded
graph once in reverse topological order and returns gradients for every
requires_grad leaf. Everything is float64; results are deterministic, so
two identical forwards produce bit-identical values and gradients.

Broadcasting is one-directional: the smaller operand (right-aligned, with
singleton dims) expands into the larger one. Mutual broadcasting, where
both operands would need to grow, raises ShapeError.

Tensors are treated as immutable once used in a forward pass; in-place
updates (optimizer steps) happen on `.data` between graphs.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "crackseg_grad_enabled", default=True)


class no_grad:
    """Context manager that disables graph recording (eval / finite diffs)."""

    def __enter__(self):
        self._token = _GRAD_ENABLED.set(False)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.reset(self._token)
        return False


class Node:
    """Op record: name, parent tensors, and the backward closure.

    `fn(grad_out)` returns one gradient array per parent (None allowed for
    parents that do not require grad).
    """

    __slots__ = ("op", "parents", "fn")

    def __init__(self, op: str, parents: tuple, fn: Callable):
        self.op = op
        self.parents = parents
        self.fn = fn


class Tensor:
    """float64 array plus autodiff bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, op: str, parents: Sequence[Tensor],
          fn: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(op, tuple(parents), fn)
    return out


def _fits_into(small: tuple, big: tuple) -> bool:
    if len(small) > len(big):
        return False
    for s, b in zip(small[::-1], big[::-1]):
        if s != b and s != 1:
            return False
    return True


def broadcast_result_shape(sa: tuple, sb: tuple) -> tuple:
    """Output shape for one-directional broadcasting; ShapeError otherwise."""
    if sa == sb:
        return sa
    if _fits_into(sb, sa):
        return sa
    if _fits_into(sa, sb):
        return sb
    raise ShapeError(
        f"shapes {sa} and {sb} do not conform (one-directional broadcast only)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape))
                 if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_result_shape(a.shape, b.shape)

    def fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return make_op(a.data + b.data, "add", (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_result_shape(a.shape, b.shape)

    def fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return make_op(a.data - b.data, "sub", (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_result_shape(a.shape, b.shape)

    def fn(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return make_op(a.data * b.data, "mul", (a, b), fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_result_shape(a.shape, b.shape)

    def fn(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return make_op(a.data / b.data, "div", (a, b), fn)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, "neg", (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return make_op(y, "exp", (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)
    return make_op(y, "sqrt", (a,), lambda g: (g * 0.5 / y,))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    """Stable two-sided logistic; only ever exponentiates -|x|."""
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = sigmoid_np(a.data)
    return make_op(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient 0 at the kink
    return make_op(np.where(mask, a.data, 0.0), "relu", (a,),
                 lambda g: (g * mask,))


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return make_op(np.clip(a.data, lo, hi), "clamp", (a,),
                 lambda g: (g * inside,))


# ------------------------------------------------------------------ reshaping

def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), "reshape", (a,),
                 lambda g: (g.reshape(a.shape),))


def permute(a, axes: tuple) -> Tensor:
    a = as_tensor(a)
    inv = tuple(np.argsort(axes))
    return make_op(a.data.transpose(axes), "permute", (a,),
                 lambda g: (g.transpose(inv),))


def broadcast_to(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    if not _fits_into(a.shape, tuple(shape)):
        raise ShapeError(f"cannot broadcast {a.shape} to {tuple(shape)}")
    return make_op(np.broadcast_to(a.data, shape).copy(), "broadcast", (a,),
                 lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat of an empty list")
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def fn(g):
        out = []
        for t, s, e in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(s), int(e))
                out.append(g[tuple(idx)])
            else:
                out.append(None)
        return tuple(out)

    return make_op(np.concatenate([t.data for t in ts], axis=axis),
                 "concat", tuple(ts), fn)


def getitem(a, key) -> Tensor:
    """Basic indexing only (ints and slices): every output element comes
    from a distinct input element, so the adjoint is plain assignment."""
    a = as_tensor(a)
    parts = key if isinstance(key, tuple) else (key,)
    for k in parts:
        if not isinstance(k, (int, np.integer, slice)):
            raise ContractError(f"unsupported index component {k!r}")
    key = tuple(parts)

    def fn(g):
        z = np.zeros(a.shape, dtype=np.float64)
        z[key] = g
        return (z,)

    return make_op(np.ascontiguousarray(a.data[key]), "getitem", (a,), fn)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def fn(g):
        z = np.zeros(a.shape, dtype=np.float64)
        z[idx] = g
        return (z,)

    return make_op(a.data[idx].copy(), "slice", (a,), fn)


# ------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_op(np.matmul(a.data, b.data), "matmul", (a, b), fn)


# ------------------------------------------------------------------ reduction

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def fn(g):
        if not keepdims:
            kept = list(a.shape)
            for ax in axes:
                kept[ax] = 1
            g = g.reshape(kept)
        return (np.broadcast_to(g, a.shape),)

    return make_op(data, "sum", (a,), fn)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axis_tuple(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    if count == 0:
        raise ContractError(f"mean over zero elements of shape {a.shape}")
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def fn(g):
        if not keepdims:
            kept = list(a.shape)
            for ax in axes:
                kept[ax] = 1
            g = g.reshape(kept)
        return (np.broadcast_to(g / count, a.shape),)

    return make_op(data, "mean", (a,), fn)


# ------------------------------------------------------------------- backward

def backward(loss: Tensor) -> dict:
    """Gradients of a scalar loss for every requires_grad leaf.

    Returns {leaf Tensor: gradient Tensor}; also fills leaf.grad with the
    raw array. Interior nodes are visited exactly once, fan-out gradients
    accumulate additively.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward needs a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    leaves: dict[int, Tensor] = {}
    while stack:
        t, done = stack.pop()
        if done:
            topo.append(t)
            continue
        if t.node is None:
            if t.requires_grad:
                leaves[id(t)] = t
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(topo):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        pgrads = t.node.fn(g)
        for p, pg in zip(t.node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            pid = id(p)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg

    out: dict[Tensor, Tensor] = {}
    if loss.node is None and loss.requires_grad:
        leaves[id(loss)] = loss
        grads.setdefault(id(loss), np.ones_like(loss.data))
    for lid, leaf in leaves.items():
        g = grads.get(lid)
        if g is None:
            g = np.zeros_like(leaf.data)
        g = np.ascontiguousarray(g, dtype=np.float64)
        leaf.grad = g
        out[leaf] = Tensor(g)
    return out


# ------------------------------------------------------------- gradient check

def gradient_check(f: Callable, inputs: Sequence[Tensor],
                   h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    f(*inputs) must return a scalar Tensor and be pure in its inputs.
    Relative error per scalar: |analytic - cd| / max(|analytic|, |cd|, 1e-8).
    Coordinates straddling a non-differentiable point (detected by a large
    second difference, as relu/abs produce at 0) are skipped.
    """
    out = f(*inputs)
    if out.data.size != 1:
        raise ContractError("gradient_check needs a scalar-valued f")
    base = float(out.data)
    grads = backward(out)
    worst = 0.0
    with no_grad():
        for t in inputs:
            if not t.requires_grad:
                continue
            gt = grads.get(t)
            ga = gt.data if gt is not None else np.zeros_like(t.data)
            for idx in np.ndindex(t.data.shape):
                orig = t.data[idx]
                t.data[idx] = orig + h
                fp = float(f(*inputs).data)
                t.data[idx] = orig - h
                fm = float(f(*inputs).data)
                t.data[idx] = orig
                if abs(fp + fm - 2.0 * base) > 0.1 * h:
                    continue  # kink straddled; one-sided slopes disagree
                cd = (fp - fm) / (2.0 * h)
                a = float(ga[idx])
                err = abs(a - cd) / max(abs(a), abs(cd), 1e-8)
                if err > worst:
                    worst = err
    return worst
