"""Reverse-mode differentiation over dense float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape` whenever one
of their inputs requires a gradient. Without an active tape nothing is recorded,
so inference is reentrant and allocation-light.

Broadcasting is limited to scalars, ``(B, n) op (n,)`` row vectors and
``(B, n) op (B, 1)`` column vectors.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_local = threading.local()


class TapeError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations for one backward pass."""

    def __init__(self) -> None:
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def record(self, out: "Tensor", parents: tuple["Tensor", ...], backward: Callable) -> None:
        if self._consumed:
            raise TapeError("tape already consumed by backward(); call reset() first")
        out._recorded = True
        self.nodes.append((out, parents, backward))

    def reset(self) -> None:
        self.nodes = []
        self._consumed = False

    def backward(self, loss: "Tensor") -> None:
        if self._consumed:
            raise TapeError("backward() called twice on the same tape without reset()")
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if not loss._recorded and loss.requires_grad:
            loss.grad += 1.0
            return
        for out, parents, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._recorded:
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
                else:
                    parent.grad += pg


class no_grad:
    """Suspend recording inside a surrounding tape."""

    def __enter__(self):
        _stack().append(None)

    def __exit__(self, *exc):
        _stack().pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_recorded", "__weakref__")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._recorded = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def make(out_data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Build an op output and record it when a tape is active and a parent needs grads.

    ``backward`` maps the upstream gradient to a tuple with one entry per parent.
    """
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=False)
    if needs:
        out.requires_grad = True
        tape.record(out, tuple(parents), backward)
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.size == 1 and a.ndim <= 1 or b.size == 1 and b.ndim <= 1:
        return
    if a.ndim == 0 or b.ndim == 0:
        return
    big, small = (a, b) if a.ndim >= b.ndim else (b, a)
    if big.ndim == 2 and small.ndim == 1 and small.shape[0] == big.shape[1]:
        return
    if big.ndim == 2 and small.ndim == 2 and small.shape == (big.shape[0], 1):
        return
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0 or int(np.prod(shape)) == 1:
        return np.asarray(g.sum()).reshape(shape)
    if len(shape) == 1:
        return g.sum(axis=0)
    if shape[1] == 1:
        return g.sum(axis=1, keepdims=True)
    raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    sa, sb = a.shape, b.shape
    return make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    ad, bd = a.data, b.data
    return make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


elementwise_product = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)
    if np.any(b.data == 0):
        raise ZeroDivisionError("division by zero in div()")
    ad, bd = a.data, b.data
    out = ad / bd
    return make(out, (a, b), lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def where(mask, a, b) -> Tensor:
    """Elementwise select; ``mask`` is a constant boolean array of the output shape."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != mask.shape or b.shape != mask.shape:
        raise ShapeError("where() needs equal shapes")
    return make(np.where(mask, a.data, b.data), (a, b), lambda g: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)
    return make(out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return make(a.data[:, start:stop], (a,), back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), lambda g: tuple(np.split(g, splits, axis=axis)))


def gather(a, index) -> Tensor:
    """Select rows ``a[index]``; repeated indices accumulate gradients."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return make(a.data[index], (a,), back)


def segment_sum(a, segments, n_segments: int, weights=None) -> Tensor:
    """``out[s] = sum_i w_i * a[i]`` over rows ``i`` with ``segments[i] == s``."""
    a = as_tensor(a)
    seg = np.asarray(segments, dtype=np.int64)
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    if seg.shape[0] != a.shape[0]:
        raise ShapeError("segment ids must match the leading dimension")
    rows = a.data if w is None else a.data * (w if a.data.ndim == 1 else w[:, None])
    out = np.zeros((n_segments,) + a.shape[1:])
    np.add.at(out, seg, rows)

    def back(g):
        ga = g[seg]
        if w is not None:
            ga = ga * (w if ga.ndim == 1 else w[:, None])
        return (ga,)

    return make(out, (a,), back)


def prod_rows(a) -> Tensor:
    """Product across the last axis of a 2-D tensor; exact gradients with zeros present."""
    a = as_tensor(a)
    x = a.data
    n, d = x.shape
    if d == 0:
        return make(np.ones(n), (a,), lambda g: (np.zeros((n, 0)),))
    prefix = np.ones((n, d + 1))
    suffix = np.ones((n, d + 1))
    for i in range(d):
        prefix[:, i + 1] = prefix[:, i] * x[:, i]
        suffix[:, d - 1 - i] = suffix[:, d - i] * x[:, d - 1 - i]
    others = prefix[:, :d] * suffix[:, 1:]
    return make(prefix[:, d].copy(), (a,), lambda g: (g[:, None] * others,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def masked_linear(x, weight, bias, mask) -> Tensor:
    """``x @ (weight * mask) + bias`` with a constant 0/1 connectivity mask."""
    x, weight = as_tensor(x), as_tensor(weight)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != weight.shape:
        raise ShapeError("mask must match the weight shape")
    xd, wm = x.data, weight.data * mask
    out = xd @ wm
    if bias is None:
        return make(out, (x, weight), lambda g: (g @ wm.T, (xd.T @ g) * mask))
    bias = as_tensor(bias)
    return make(out + bias.data, (x, weight, bias), lambda g: (g @ wm.T, (xd.T @ g) * mask, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log() of a non-positive value")
    ad = a.data
    return make(np.log(ad), (a,), lambda g: (g / ad,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    return make(out, (a,), lambda g: (g * _sigmoid(x),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return make(np.where(pos, a.data, 0.0), (a,), lambda g: (np.where(pos, g, 0.0),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out * out),))


def softmax(a) -> Tensor:
    """Softmax along the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradients(fn: Callable[[], Tensor], params: Iterable[Tensor]) -> list[np.ndarray]:
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [p.grad.copy() for p in params]


def finite_diff_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    coords: Sequence[tuple[int, int]] | None = None,
    floor: float = 1e-8,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``coords`` lists ``(param index, flat index)`` pairs to probe; by default
    every coordinate of every parameter is checked.
    """
    params = list(params)
    analytic = gradients(fn, params)
    if coords is None:
        coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + eps
            up = fn().item()
            flat[j] = orig - eps
            down = fn().item()
            flat[j] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, relative_error(analytic[i].reshape(-1)[j], numeric, floor))
    return worst
