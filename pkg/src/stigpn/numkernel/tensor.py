"""Dense double-precision tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active, and touching at least one
tensor with ``requires_grad``, are appended to that tape together with a local
gradient rule.  :func:`backward` replays the tape in reverse order.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
LEAKY_SLOPE = 0.2

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "stigpn_active_tape", default=None
)


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad", "_leaf", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype == DTYPE:
            arr = data
        else:
            arr = np.array(data, dtype=DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self._leaf = True
        self._tape: Tape | None = None
        self._grad = np.zeros_like(arr) if requires_grad else None
        self.name = name

    # ---- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def grad(self) -> np.ndarray | None:
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    def zero_grad(self) -> None:
        if self.requires_grad:
            self._grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ---- operator sugar ----------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)


Rule = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Rule]] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def backward(self, loss: Tensor) -> int:
        return backward(loss)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], rule: Rule) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    out = Tensor(data)
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                out._leaf = False
                out._tape = tape
                tape.entries.append((out, inputs, rule))
                break
    return out


def backward(loss: Tensor) -> int:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    Returns the number of tape entries whose rule was applied.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not produced by operations recorded on a tape")
    seed = np.ones_like(loss.data)
    pending: dict[int, np.ndarray] = {id(loss): seed}
    applied = 0
    for out, inputs, rule in reversed(tape.entries):
        g = pending.pop(id(out), None)
        if g is None:
            continue
        out._grad = g
        applied += 1
        for inp, gi in zip(inputs, rule(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._leaf:
                inp.grad += gi
            else:
                key = id(inp)
                prev = pending.get(key)
                pending[key] = gi if prev is None else prev + gi
    return applied


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), rule)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def rule(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), rule)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` as a single taped operation."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear shape mismatch: {x.shape} @ {weight.shape}")
    out = x.data @ weight.data
    inputs: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs = (x, weight, bias)
    d_in = weight.shape[0]

    def rule(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = x.data.reshape(-1, d_in).T @ g.reshape(-1, g.shape[-1])
        if bias is None:
            return gx, gw
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _result(out, inputs, rule)


# ---- activations ---------------------------------------------------------------

def activation(x, kind: str, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    d = x.data
    if kind == "relu":
        pos = d > 0
        return _result(np.where(pos, d, 0.0), (x,), lambda g: (g * pos,))
    if kind == "leaky_relu":
        pos = d > 0
        return _result(np.where(pos, d, slope * d), (x,), lambda g: (np.where(pos, g, slope * g),))
    if kind == "tanh":
        y = np.tanh(d)
        return _result(y, (x,), lambda g: (g * (1.0 - y * y),))
    if kind == "sigmoid":
        y = 0.5 * (1.0 + np.tanh(0.5 * d))
        return _result(y, (x,), lambda g: (g * y * (1.0 - y),))
    raise ValueError(f"unknown activation {kind!r}")


def relu(x) -> Tensor:
    return activation(x, "relu")


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    return activation(x, "leaky_relu", slope)


def tanh(x) -> Tensor:
    return activation(x, "tanh")


def sigmoid(x) -> Tensor:
    return activation(x, "sigmoid")


# ---- structural ops --------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return _result(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    basic = _is_basic_index(idx)

    def rule(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _result(x.data[idx], (x,), rule)


def take(x, indices) -> Tensor:
    """Gather rows of ``x`` (axis 0); the gradient scatters back additively."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    n = x.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise IndexError(f"row index out of range [0, {n}): {indices.ravel().tolist()}")

    def rule(g):
        out = np.zeros_like(x.data)
        np.add.at(out, indices, g)
        return (out,)

    return _result(x.data[indices], (x,), rule)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([t.data for t in ts], axis=axis), ts, lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _result(np.stack([t.data for t in ts], axis=axis), ts, rule)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), rule)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis, keepdims), 1.0 / n)


# ---- normalisation / losses ----------------------------------------------------

def masked_row_softmax(scores, mask) -> Tensor:
    """Softmax along the last axis restricted to ``mask``.

    Masked-out entries are exactly zero; rows whose mask is empty are all zero.
    """
    scores = as_tensor(scores)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    s = scores.data
    filled = np.where(mask, s, -np.finfo(DTYPE).max)
    row_max = filled.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(mask, np.exp(np.where(mask, s - row_max, 0.0)), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    p = e / np.where(denom > 0, denom, 1.0)

    def rule(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (scores,), rule)


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_np(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax_np(logits))


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(f"cross_entropy expects (n, C) logits for {targets.shape[0]} targets, got {logits.shape}")
    n, c = logits.shape
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise IndexError(f"target out of range [0, {c}): {targets.tolist()}")
    if n == 0:
        return _result(np.zeros(()), (logits,), lambda g: (np.zeros_like(logits.data),))
    logp = log_softmax_np(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def rule(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (g / n),)

    return _result(np.asarray(loss), (logits,), rule)


def batch_norm(x, gamma, beta, eps: float = 1e-5) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalise over every axis but the last using batch statistics.

    Returns the output together with the batch mean and biased variance.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    flat = x.data.reshape(-1, d)
    n = flat.shape[0]
    mu = flat.mean(axis=0)
    var = flat.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (flat - mu) * inv_std
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def rule(g):
        g2 = g.reshape(-1, d)
        ggamma = (g2 * xhat).sum(axis=0)
        gbeta = g2.sum(axis=0)
        dxhat = g2 * gamma.data
        gx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return gx.reshape(x.shape), ggamma, gbeta

    return _result(out, (x, gamma, beta), rule), mu, var


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
