# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels: masked softmax, LSTM gates, candidate loss.

Same contracts as ``tedpolicy._fallback``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, tanh

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def softmax_rows(const double[:, ::1] x, const unsigned char[:, ::1] mask):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], i, j
    cdef double top, total
    cdef bint seen
    out = np.zeros((n, c), dtype=np.float64)
    cdef double[:, ::1] y = out
    for i in range(n):
        seen = False
        top = 0.0
        for j in range(c):
            if mask[i, j]:
                if not seen or x[i, j] > top:
                    top = x[i, j]
                seen = True
        if not seen:
            raise ValueError("masked_softmax: fully masked row")
        total = 0.0
        for j in range(c):
            if mask[i, j]:
                y[i, j] = exp(x[i, j] - top)
                total += y[i, j]
        for j in range(c):
            if mask[i, j]:
                y[i, j] = y[i, j] / total
    return out


def softmax_rows_backward(const double[:, ::1] y, const double[:, ::1] gy,
                          const unsigned char[:, ::1] mask):
    cdef Py_ssize_t n = y.shape[0], c = y.shape[1], i, j
    cdef double inner
    out = np.zeros((n, c), dtype=np.float64)
    cdef double[:, ::1] gx = out
    for i in range(n):
        inner = 0.0
        for j in range(c):
            inner += gy[i, j] * y[i, j]
        for j in range(c):
            if mask[i, j]:
                gx[i, j] = y[i, j] * (gy[i, j] - inner)
    return out


def lstm_gates(const double[:, ::1] z, const double[:, ::1] c_prev):
    cdef Py_ssize_t b = c_prev.shape[0], hsz = c_prev.shape[1], r, k
    gates_arr = np.empty((b, 4 * hsz), dtype=np.float64)
    c_arr = np.empty((b, hsz), dtype=np.float64)
    tc_arr = np.empty((b, hsz), dtype=np.float64)
    h_arr = np.empty((b, hsz), dtype=np.float64)
    cdef double[:, ::1] gates = gates_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] tc = tc_arr
    cdef double[:, ::1] h = h_arr
    cdef double gi, gf, gg, go
    for r in range(b):
        for k in range(hsz):
            gi = _sigmoid(z[r, k])
            gf = _sigmoid(z[r, hsz + k])
            gg = tanh(z[r, 2 * hsz + k])
            go = _sigmoid(z[r, 3 * hsz + k])
            gates[r, k] = gi
            gates[r, hsz + k] = gf
            gates[r, 2 * hsz + k] = gg
            gates[r, 3 * hsz + k] = go
            c[r, k] = gf * c_prev[r, k] + gi * gg
            tc[r, k] = tanh(c[r, k])
            h[r, k] = go * tc[r, k]
    return gates_arr, c_arr, tc_arr, h_arr


def lstm_gates_backward(const double[:, ::1] gates, const double[:, ::1] c_prev,
                        const double[:, ::1] tc, const double[:, ::1] gh,
                        const double[:, ::1] gc):
    cdef Py_ssize_t b = c_prev.shape[0], hsz = c_prev.shape[1], r, k
    gz_arr = np.empty((b, 4 * hsz), dtype=np.float64)
    gcp_arr = np.empty((b, hsz), dtype=np.float64)
    cdef double[:, ::1] gz = gz_arr
    cdef double[:, ::1] gcp = gcp_arr
    cdef double gi, gf, gg, go, dc
    for r in range(b):
        for k in range(hsz):
            gi = gates[r, k]
            gf = gates[r, hsz + k]
            gg = gates[r, 2 * hsz + k]
            go = gates[r, 3 * hsz + k]
            dc = gc[r, k] + gh[r, k] * go * (1.0 - tc[r, k] * tc[r, k])
            gz[r, k] = dc * gg * gi * (1.0 - gi)
            gz[r, hsz + k] = dc * c_prev[r, k] * gf * (1.0 - gf)
            gz[r, 2 * hsz + k] = dc * gi * (1.0 - gg * gg)
            gz[r, 3 * hsz + k] = gh[r, k] * tc[r, k] * go * (1.0 - go)
            gcp[r, k] = dc * gf
    return gz_arr, gcp_arr


def logsumexp(const double[::1] v):
    cdef Py_ssize_t n = v.shape[0], i
    cdef double top, total = 0.0
    if n == 0:
        raise ValueError("logsumexp of an empty list")
    top = v[0]
    for i in range(1, n):
        if v[i] > top:
            top = v[i]
    for i in range(n):
        total += exp(v[i] - top)
    return top + log(total)


def candidate_loss(const double[:, ::1] scores, const cnp.int64_t[::1] gold,
                   const unsigned char[:, ::1] cand, const double[::1] weight):
    cdef Py_ssize_t n = scores.shape[0], a = scores.shape[1], i, j
    cdef double top, total, loss = 0.0
    cdef bint seen
    out = np.zeros((n, a), dtype=np.float64)
    cdef double[:, ::1] grad = out
    for i in range(n):
        seen = False
        top = 0.0
        for j in range(a):
            if cand[i, j]:
                if not seen or scores[i, j] > top:
                    top = scores[i, j]
                seen = True
        total = 0.0
        for j in range(a):
            if cand[i, j]:
                grad[i, j] = exp(scores[i, j] - top)
                total += grad[i, j]
        loss += weight[i] * (top + log(total) - scores[i, gold[i]])
        for j in range(a):
            if cand[i, j]:
                grad[i, j] = weight[i] * grad[i, j] / total
        grad[i, gold[i]] -= weight[i]
    return loss, out
