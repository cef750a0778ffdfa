"""Dense float64 tensors with tape-based reverse-mode differentiation and Adam.

Every trainable computation in the package goes through :class:`Tensor` so a
single call to :func:`backward` reaches all parameters. Operations record
themselves on the active :class:`Tape` whenever one of their inputs requires a
gradient; the tape is replayed in reverse and cleared by ``backward``.

Other modules add their own differentiable primitives with :func:`custom_op`
(the sparse propagation in :mod:`corgcn.graph` is one).
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

NORM_EPS = 1e-12


class Tape:
    """Ordered record of forward operations.

    Each entry holds the output tensor, its parent tensors and a closure mapping
    the output gradient to one gradient per parent (``None`` for parents that
    do not need one).
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._index: dict[int, int] = {}

    def record(self, out: "Tensor", parents: tuple["Tensor", ...], vjp: Callable) -> None:
        self._index[id(out)] = len(self.nodes)
        self.nodes.append((out, parents, vjp))

    def position(self, t: "Tensor") -> int | None:
        return self._index.get(id(t))

    def clear(self) -> None:
        self.nodes.clear()
        self._index.clear()

    def __len__(self):
        return len(self.nodes)


_TAPE = Tape()
_GRAD_ENABLED = True


def get_tape() -> Tape:
    return _TAPE


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 copy: bool = True):
        self.data = np.array(data, dtype=np.float64, copy=copy or None)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.is_leaf = True

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``data`` as the output of a differentiable operation.

    ``vjp(g)`` must return one array (or ``None``) per parent, each shaped like
    that parent. Nothing is recorded unless some parent requires a gradient.
    """
    out = Tensor(data, copy=False)
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.is_leaf = False
        _TAPE.record(out, parents, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)
    return custom_op(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)
    return custom_op(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)
    return custom_op(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape),
                                _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a.data, b.data)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: zero in denominator")
    out = a.data / b.data
    return custom_op(out, (a, b),
                     lambda g: (_unbroadcast(g / b.data, a.shape),
                                _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    if exponent != int(exponent) and np.any(a.data < 0):
        raise ValueError("power: negative base with non-integer exponent")
    if exponent < 1 and exponent != 0 and np.any(a.data == 0):
        raise ValueError("power: zero base with exponent below 1")
    out = a.data ** exponent

    def vjp(g):
        if exponent == 0:
            return (np.zeros_like(a.data),)
        return (g * exponent * a.data ** (exponent - 1),)

    return custom_op(out, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return custom_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log: non-positive input")
    return custom_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return custom_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return custom_op(a.data * mask, (a,), lambda g: (g * mask,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip into ``[lo, hi]``; the gradient is blocked where clipping happened."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return custom_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def dropout(a, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: kept entries are scaled by ``1/(1-rate)`` at train time."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ValueError("dropout rate must be below 1")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return custom_op(a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul: operands must have at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    if b.ndim == 2 and a.ndim > 2:
        # one large product instead of a batch of small ones
        return _folded_matmul(a, b)
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return custom_op(out, (a, b), vjp)


def _folded_matmul(a: Tensor, b: Tensor) -> Tensor:
    lead = a.shape[:-1]
    a2 = a.data.reshape(-1, a.shape[-1])
    out = (a2 @ b.data).reshape(*lead, b.shape[-1])

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    return custom_op(out, (a, b), vjp)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return custom_op(np.swapaxes(a.data, ax1, ax2), (a,),
                     lambda g: (np.swapaxes(g, ax1, ax2),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return custom_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a, index) -> Tensor:
    """Basic or fancy indexing; repeated fancy indices accumulate gradient."""
    a = as_tensor(a)
    out = a.data[index]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return custom_op(np.array(out), (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return custom_op(out, tensors, vjp)


# ---------------------------------------------------------------- reductions

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return custom_op(out, (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / count)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return custom_op(out, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    prob = np.exp(out)

    def vjp(g):
        return (g - prob * g.sum(axis=axis, keepdims=True),)

    return custom_op(out, (a,), vjp)


def l2_normalize(a, axis: int = -1) -> Tensor:
    """Scale slices along ``axis`` to unit length; zero slices map to zero."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    live = norm > NORM_EPS
    safe = np.where(live, norm, 1.0)
    out = np.where(live, a.data / safe, 0.0)

    def vjp(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(live, (g - out * proj) / safe, 0.0),)

    return custom_op(out, (a,), vjp)


# ---------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss`` and clear the tape."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    pos = _TAPE.position(loss)
    if pos is None:
        raise RuntimeError("loss is not on the tape; backward was already called "
                           "or the loss does not depend on any parameter")
    if not np.isfinite(loss.data).all():
        _TAPE.clear()
        raise FloatingPointError("non-finite loss")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, parents, vjp in reversed(_TAPE.nodes[: pos + 1]):
        g = pending.pop(id(out), None)
        if g is None:
            continue
        for parent, pg in zip(parents, vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            elif id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + pg
            else:
                pending[id(parent)] = pg
    _TAPE.clear()


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; gradients are cleared afterwards."""
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: no gradient for {', '.join(missing)}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        g = p.grad
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
