"""Log-domain arithmetic that tolerates ``-inf`` entries.

All functions follow the subtract-the-maximum pattern. A slice whose entries
are all ``-inf`` sums to ``-inf`` (an exact zero) instead of producing NaN.
"""

import numpy as np


def logsumexp(a, axis=None, keepdims=False):
    """Compute ``log(sum(exp(a)))`` along ``axis``."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        shape = np.sum(a, axis=axis, keepdims=keepdims).shape
        return np.full(shape, -np.inf) if shape else -np.inf
    amax = np.max(a, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - shift), axis=axis, keepdims=True)) + shift
    # an all -inf slice gives log(0) + 0 = -inf, a +inf max propagates
    out = np.where(np.isposinf(amax), np.inf, out)
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out[()] if isinstance(out, np.ndarray) and out.ndim == 0 else out


def normalize_log(a, axis=-1):
    """Return ``(weights, log_normalizer)`` for log-weights ``a`` along ``axis``.

    Slices that are entirely ``-inf`` yield NaN weights and a ``-inf``
    normalizer; callers decide whether that is an error.
    """
    a = np.asarray(a, dtype=float)
    amax = np.max(a, axis=axis, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.exp(a - amax)
        total = np.sum(e, axis=axis, keepdims=True)
        w = e / total
        lse = np.where(np.isneginf(amax), -np.inf, np.log(total) + amax)
    return w, np.squeeze(lse, axis=axis)
