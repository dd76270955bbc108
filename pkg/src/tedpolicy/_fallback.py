"""Pure numpy versions of the hot kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
Inputs are 2-D float64 arrays; masks are uint8 arrays of the same shape.
"""
import numpy as np


def softmax_rows(x, mask):
    m = mask.astype(bool)
    if not m.any(axis=1).all():
        raise ValueError("masked_softmax: fully masked row")
    shifted = np.where(m, x, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(m, np.exp(shifted), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, gy, mask):
    inner = (gy * y).sum(axis=1, keepdims=True)
    gx = y * (gy - inner)
    gx[mask == 0] = 0.0
    return gx


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_gates(z, c_prev):
    """Gate nonlinearities for pre-activations ordered [input, forget, cell, output]."""
    hidden = c_prev.shape[1]
    gates = np.empty_like(z)
    gates[:, :hidden] = _sigmoid(z[:, :hidden])
    gates[:, hidden:2 * hidden] = _sigmoid(z[:, hidden:2 * hidden])
    gates[:, 2 * hidden:3 * hidden] = np.tanh(z[:, 2 * hidden:3 * hidden])
    gates[:, 3 * hidden:] = _sigmoid(z[:, 3 * hidden:])
    i, f, g = gates[:, :hidden], gates[:, hidden:2 * hidden], gates[:, 2 * hidden:3 * hidden]
    o = gates[:, 3 * hidden:]
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return gates, c, tc, h


def lstm_gates_backward(gates, c_prev, tc, gh, gc):
    hidden = c_prev.shape[1]
    i, f, g = gates[:, :hidden], gates[:, hidden:2 * hidden], gates[:, 2 * hidden:3 * hidden]
    o = gates[:, 3 * hidden:]
    dc = gc + gh * o * (1.0 - tc * tc)
    gz = np.empty_like(gates)
    gz[:, :hidden] = dc * g * i * (1.0 - i)
    gz[:, hidden:2 * hidden] = dc * c_prev * f * (1.0 - f)
    gz[:, 2 * hidden:3 * hidden] = dc * i * (1.0 - g * g)
    gz[:, 3 * hidden:] = gh * tc * o * (1.0 - o)
    return gz, dc * f


def logsumexp(v):
    if v.shape[0] == 0:
        raise ValueError("logsumexp of an empty list")
    top = v.max()
    return float(top + np.log(np.exp(v - top).sum()))


def candidate_loss(scores, gold, cand, weight):
    """Weighted sum over rows of ``logsumexp(candidates) - score[gold]``.

    ``cand`` marks the candidate set of each row and must include the gold
    column. Returns the loss and its gradient with respect to ``scores``.
    """
    rows = np.arange(scores.shape[0])
    m = cand.astype(bool)
    shifted = np.where(m, scores, -np.inf)
    top = shifted.max(axis=1, keepdims=True)
    e = np.where(m, np.exp(shifted - top), 0.0)
    total = e.sum(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(total[:, 0])
    per_row = lse - scores[rows, gold]
    grad = e / total
    grad[rows, gold] -= 1.0
    grad *= weight[:, None]
    return float((per_row * weight).sum()), grad
