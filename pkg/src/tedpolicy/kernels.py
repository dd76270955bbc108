"""Hot-kernel dispatch.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy implementations in ``_fallback`` are used. Set ``TEDPOLICY_PURE_PYTHON=1``
to force the fallback. Both backends agree to rounding error, not bit for bit,
so checkpoints are reproducible only within one backend.
"""
import os

import numpy as np

from tedpolicy import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("TEDPOLICY_PURE_PYTHON"):
    try:
        from tedpolicy import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _u8(a):
    return np.ascontiguousarray(a, dtype=np.uint8)


def softmax_rows(x, mask, impl=None):
    return (impl or _impl).softmax_rows(_f64(x), _u8(mask))


def softmax_rows_backward(y, gy, mask, impl=None):
    return (impl or _impl).softmax_rows_backward(_f64(y), _f64(gy), _u8(mask))


def lstm_gates(z, c_prev, impl=None):
    return (impl or _impl).lstm_gates(_f64(z), _f64(c_prev))


def lstm_gates_backward(gates, c_prev, tc, gh, gc, impl=None):
    return (impl or _impl).lstm_gates_backward(_f64(gates), _f64(c_prev), _f64(tc), _f64(gh), _f64(gc))


def logsumexp(values, impl=None):
    return (impl or _impl).logsumexp(_f64(np.asarray(values, dtype=np.float64).ravel()))


def candidate_loss(scores, gold, cand, weight, impl=None):
    return (impl or _impl).candidate_loss(
        _f64(scores), np.ascontiguousarray(gold, dtype=np.int64), _u8(cand), _f64(weight)
    )


def available_backends():
    """Mapping of backend name to implementation module, for tests and benchmarks."""
    found = {"python": _fallback}
    try:
        from tedpolicy import _kernels

        found["cython"] = _kernels
    except ImportError:
        pass
    return found
