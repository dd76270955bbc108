"""Small dense tensors with a reverse-mode tape.

Ops record themselves on the innermost active :class:`Tape` whenever one of
their inputs requires a gradient. Without an active tape they are plain numpy
computations, which is how inference runs.

    >>> w = Tensor([[3.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = sum_all(mul(w, w))
    >>> grads = backward(tape, y)
    >>> float(w.grad[0, 0])
    6.0
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from tedpolicy import kernels

__all__ = [
    "Tensor", "Tape", "backward", "NumericError", "ShapeError",
    "add", "sub", "mul", "scale", "relu", "matmul", "transpose", "masked_softmax",
    "logsumexp", "sum_all", "gather_rows", "slice_rows", "slice_last", "stack",
    "lstm_cell", "candidate_loss", "AdamState", "adam_step", "Adam", "glorot_uniform",
]

MAX_RANK = 3
_ids = itertools.count()
_local = threading.local()


def _stack():
    # one tape stack per thread so concurrent training jobs never share records
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


class NumericError(ArithmeticError):
    """A forward op produced NaN or Inf."""


class ShapeError(ValueError):
    pass


def _check_finite(op, arr):
    if not np.isfinite(arr).all():
        raise NumericError(f"{op}: non-finite result")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "id", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds {MAX_RANK}")
        if 0 in arr.shape:
            raise ShapeError(f"empty extent in shape {arr.shape}")
        _check_finite(name or "tensor", arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.id = next(_ids)
        self.name = name

    @classmethod
    def _wrap(cls, arr):
        # skips the copy and validation done in __init__; used for op outputs
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.id = next(_ids)
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: Tensor
    backward: object


@dataclass
class Tape:
    """Ordered record of differentiable ops, innermost-active-wins."""

    records: list = field(default_factory=list)

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().remove(self)
        return False

    def clear(self):
        self.records.clear()


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op, inputs, out_arr, backward_fn):
    _check_finite(op, out_arr)
    out = Tensor._wrap(out_arr)
    active = _stack()
    if active and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        active[-1].records.append(_Record(op, inputs, out, backward_fn))
    return out


def backward(tape, loss):
    """Propagate d(loss)/d(node) through ``tape``; returns ``{leaf.id: grad}``.

    Every requires_grad leaf seen on the tape gets ``.grad`` set (zeros when
    the loss does not depend on it). The tape is cleared afterwards.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {r.output.id for r in tape.records}
    if loss.id not in produced:
        raise ValueError("loss node is not on the tape")
    grads = {loss.id: np.ones((), dtype=np.float64)}
    leaves = {}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output.id, None)
        for t in rec.inputs:
            if t.requires_grad and t.id not in produced:
                leaves[t.id] = t
        if g is None:
            continue
        for t, gt in zip(rec.inputs, rec.backward(g)):
            if gt is None or not t.requires_grad:
                continue
            if t.id in grads:
                grads[t.id] = grads[t.id] + gt
            else:
                grads[t.id] = gt
    store = {}
    for tid, t in leaves.items():
        g = grads.get(tid)
        t.grad = np.zeros_like(t.data) if g is None else g.reshape(t.data.shape)
        store[tid] = t.grad
    tape.clear()
    return store


# -- elementwise ---------------------------------------------------------------

def _broadcast_shape(op, a, b):
    if a.shape == b.shape:
        return a.shape
    if a.ndim > b.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return a.shape
    if b.ndim > a.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return b.shape
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast along leading axes")


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra))) if extra else g


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd,
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c):
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(a):
    on = a.data > 0
    return _emit("relu", (a,), np.where(on, a.data, 0.0), lambda g: (g * on,))


def sum_all(a):
    shape = a.shape
    return _emit("sum", (a,), np.asarray(a.data.sum()),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


# -- linear algebra ------------------------------------------------------------

def _swap(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b):
    """(m,k)@(k,n), (B,m,k)@(k,n) or (B,m,k)@(B,k,n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (2, 3) or bd.ndim not in (2, 3) or (ad.ndim == 2 and bd.ndim == 3):
        raise ShapeError(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2] or (bd.ndim == 3 and ad.shape[0] != bd.shape[0]):
        raise ShapeError(f"matmul: shape mismatch {ad.shape} @ {bd.shape}")

    def grad(g):
        ga = g @ _swap(bd)
        if bd.ndim == 2 and ad.ndim == 3:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _swap(ad) @ g
        return ga, gb

    return _emit("matmul", (a, b), ad @ bd, grad)


def transpose(a):
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError("transpose needs rank >= 2")
    return _emit("transpose", (a,), np.ascontiguousarray(_swap(a.data)), lambda g: (_swap(g),))


# -- softmax family ------------------------------------------------------------

def masked_softmax(scores, mask):
    """Softmax over the last axis restricted to ``mask == 1`` entries.

    Masked entries come out exactly 0 and get exactly 0 gradient. ``mask`` may
    have the full shape or a trailing suffix of it.
    """
    scores = _as_tensor(scores)
    m = np.asarray(mask)
    if not np.isin(m, (0, 1)).all():
        raise ValueError("masked_softmax: mask entries must be 0 or 1")
    shape = scores.shape
    m = np.broadcast_to(m, shape) if m.shape != shape else m
    if m.shape != shape:
        raise ShapeError(f"masked_softmax: mask {m.shape} vs scores {shape}")
    cols = shape[-1]
    m2 = m.reshape(-1, cols)
    y = kernels.softmax_rows(scores.data.reshape(-1, cols), m2)

    def grad(g):
        return (kernels.softmax_rows_backward(y, g.reshape(-1, cols), m2).reshape(shape),)

    return _emit("masked_softmax", (scores,), y.reshape(shape), grad)


def logsumexp(values):
    """log(sum(exp(values))) of a 1-D tensor (or list of floats), max-shifted."""
    if not isinstance(values, Tensor):
        if len(values) == 0:
            raise ValueError("logsumexp of an empty list")
        values = Tensor(np.asarray(values, dtype=np.float64))
    v = values.data.ravel()
    out = kernels.logsumexp(v)
    shape = values.shape

    def grad(g):
        return ((g * np.exp(v - out)).reshape(shape),)

    return _emit("logsumexp", (values,), np.asarray(out), grad)


def candidate_loss(scores, gold, candidates, weights):
    """Weighted sum over rows of ``-(s_gold - logsumexp(s_candidates))``.

    ``scores`` is (rows, actions); ``candidates`` is a 0/1 matrix that marks
    the gold column plus the sampled negatives of each row.
    """
    gold = np.asarray(gold, dtype=np.int64)
    cand = np.asarray(candidates, dtype=np.uint8)
    w = np.asarray(weights, dtype=np.float64)
    rows = np.arange(len(gold))
    if scores.ndim != 2 or cand.shape != scores.shape or len(gold) != scores.shape[0]:
        raise ShapeError("candidate_loss: inconsistent shapes")
    if not cand[rows, gold].all():
        raise ValueError("candidate_loss: gold column missing from candidate set")
    loss, dscores = kernels.candidate_loss(scores.data, gold, cand, w)
    return _emit("candidate_loss", (scores,), np.asarray(loss), lambda g: (g * dscores,))


# -- indexing and layout -------------------------------------------------------

def gather_rows(x, first, second):
    """Pick ``x[first[r], second[r], :]`` for each r of a rank-3 tensor."""
    first = np.asarray(first, dtype=np.int64)
    second = np.asarray(second, dtype=np.int64)
    shape = x.shape

    def grad(g):
        out = np.zeros(shape)
        np.add.at(out, (first, second), g)
        return (out,)

    return _emit("gather_rows", (x,), x.data[first, second], grad)


def slice_rows(x, start, stop):
    shape = x.shape

    def grad(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _emit("slice_rows", (x,), x.data[start:stop].copy(), grad)


def slice_last(x, start, stop):
    shape = x.shape

    def grad(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _emit("slice_last", (x,), np.ascontiguousarray(x.data[..., start:stop]), grad)


def stack(tensors, axis=1):
    n = len(tensors)
    return _emit("stack", tuple(tensors), np.stack([t.data for t in tensors], axis=axis),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def lstm_cell(z, c_prev):
    """Fused LSTM gate step; returns ``[h | c]`` of shape (batch, 2*hidden).

    ``z`` holds pre-activations for the input, forget, cell and output gates.
    """
    if z.ndim != 2 or c_prev.ndim != 2 or z.shape[1] != 4 * c_prev.shape[1]:
        raise ShapeError(f"lstm_cell: z {z.shape} vs c {c_prev.shape}")
    hidden = c_prev.shape[1]
    cp = c_prev.data
    gates, c, tc, h = kernels.lstm_gates(z.data, cp)

    def grad(g):
        return kernels.lstm_gates_backward(gates, cp, tc, g[:, :hidden], g[:, hidden:])

    return _emit("lstm_cell", (z, c_prev), np.concatenate([h, c], axis=1), grad)


# -- optimisation --------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of ``params`` (name -> array) in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad {g.shape} vs param {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        elif m.shape != p.shape:
            raise ShapeError(f"adam_step: state {m.shape} vs param {p.shape} for {name}")
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self, params, grads):
        adam_step(params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
