"""A small reverse-mode autodiff over float64 numpy arrays.

Operations on tensors that require gradients are recorded on the innermost
active :class:`Tape`; :func:`backward` replays that tape in reverse. Nothing
is recorded outside a ``with Tape():`` block, which is how rollouts and
evaluation run without bookkeeping.

    >>> x = Tensor([3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = (x * x).sum()
    >>> backward(tape, y)
    >>> x.grad
    array([6.])
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    """A caller broke the documented preconditions of an operation."""


class NoFeasibleAction(ContractError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "_index")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self._index = -1

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    __array_priority__ = 100

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Node:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs, output, vjp):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


_local = threading.local()


def _active() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Append-only record of primitive applications, in evaluation order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False


class no_grad:
    """Suspend recording inside an active tape."""

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(None)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    tape = _active()
    if tape is None or not any(t.requires_grad for t in inputs):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out._tape = tape
    out._index = len(tape.nodes)
    tape.nodes.append(_Node(inputs, out, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every grad-requiring leaf reachable from ``loss``.

    Leaf gradients are overwritten, not accumulated across calls.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape:
        raise ContractError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes[: loss._index + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if inp._tape is None:
                leaves[key] = inp
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for key, leaf in leaves.items():
        leaf.grad = np.array(grads[key], dtype=np.float64).reshape(leaf.shape)


# elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        ad / bd,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)),
    )


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0.0), (x,), lambda g: (np.where(pos, g, 0.0),))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _record(np.log(xd), (x,), lambda g: (g / xd,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,))


# reductions and shape ----------------------------------------------------------


def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _record(
        np.sum(x.data, axis=axis, keepdims=keepdims),
        (x,),
        lambda g: (_expand(g, shape, axis, keepdims),),
    )


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    count = x.size if axis is None else np.prod([shape[a] for a in np.atleast_1d(axis)])
    return _record(
        np.mean(x.data, axis=axis, keepdims=keepdims),
        (x,),
        lambda g: (_expand(g, shape, axis, keepdims) / count,),
    )


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return _record(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _record(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp)


def select(x, index) -> Tensor:
    """Pick ``x[b, index[b], ...]`` for every leading index ``b``.

    Serves as the embedding gather (node rows out of ``(B, n, d)``) and as the
    chosen-action lookup in ``(B, n)`` log-probabilities.
    """
    x = as_tensor(x)
    index = np.array(index, dtype=np.intp)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        np.add.at(gx, (rows, index), g)
        return (gx,)

    return _record(x.data[rows, index], (x,), vjp)


# normalisation and softmax --------------------------------------------------------


def normalize_features(x, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance over the last axis, independently per row."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    y = centred * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _record(y, (x,), vjp)


def _masked_shift(xd: np.ndarray, mask):
    if mask is None:
        return xd - xd.max(axis=-1, keepdims=True), None
    # copied: callers may mutate their mask after the forward pass
    mask = np.array(np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape))
    if mask.all(axis=-1).any():
        raise NoFeasibleAction("no feasible action: a row is fully masked")
    z = np.where(mask, -np.inf, xd)
    return z - z.max(axis=-1, keepdims=True), mask


def softmax_lastdim(x, mask=None) -> Tensor:
    """Softmax over the last axis; entries where ``mask`` is True are exactly 0."""
    x = as_tensor(x)
    z, mask = _masked_shift(x.data, mask)
    e = np.exp(z)  # exp(-inf) == 0.0 exactly
    y = e / e.sum(axis=-1, keepdims=True)
    return _record(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def log_softmax_lastdim(x, mask=None) -> Tensor:
    """Log-softmax over the last axis; masked entries are ``-inf``."""
    x = as_tensor(x)
    z, mask = _masked_shift(x.data, mask)
    e = np.exp(z)
    s = e.sum(axis=-1, keepdims=True)
    y = z - np.log(s)
    p = e / s

    def vjp(g):
        if mask is not None:
            g = np.where(mask, 0.0, g)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record(y, (x,), vjp)


# gradient oracle --------------------------------------------------------------


def finite_difference_check(
    f: Callable[..., Tensor],
    params: Tensor | Sequence[Tensor],
    h: float = 1e-6,
    floor: float = 1e-8,
) -> float:
    """Worst relative error between autodiff and central differences.

    ``f(params)`` must rebuild its graph from the current values of
    ``params`` on every call. Coordinates whose gradient magnitude (analytic
    and numeric) is below ``floor`` are scored by absolute error instead.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    plist = [params] if isinstance(params, Tensor) else list(params)
    with Tape() as tape:
        loss = f(params)
    backward(tape, loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in plist]

    def value() -> float:
        return as_tensor(f(params)).item()

    base = value()
    if value() != base or base != loss.item():
        raise ContractError("f is not deterministic: repeated evaluations differ")

    worst = 0.0
    for p, grad in zip(plist, analytic):
        if not p.data.flags.c_contiguous or not p.data.flags.writeable:
            p.data = p.data.copy()
        flat = p.data.reshape(-1)  # a view, so writes below reach p
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            scale = max(abs(num), abs(gflat[i]))
            err = abs(num - gflat[i])
            if scale >= floor:
                err /= scale
            worst = max(worst, err)
    return worst
