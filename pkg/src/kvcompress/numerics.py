"""
Dense numeric kernels used by every other module.

All kernels are pure functions over numpy arrays. Inputs are accepted in any
floating dtype; softmax accumulates in float64 after max subtraction so that
results are reproducible bit-for-bit across calls.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidK, InvalidKernel, InvalidShape, NonFiniteInput

__all__ = ["stable_softmax", "argtopk", "pool1d", "running_minmax_update"]


def stable_softmax(logits, axis=-1, mask=None):
    """Softmax with max subtraction, computed in float64.

    Works on vectors and on batches of rows (reduction over ``axis``).
    ``mask`` (broadcastable, True = hidden) removes positions from the
    normalization; every row must keep at least one visible position.
    """
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise InvalidShape("softmax of an empty vector")
    if not np.isfinite(x).all():
        raise NonFiniteInput("softmax input contains NaN or inf")
    if mask is not None:
        x = np.where(mask, -np.inf, x)
    m = x.max(axis=axis, keepdims=True)
    if np.isneginf(m).any():
        raise InvalidShape("softmax row has no visible position")
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def argtopk(scores, k):
    """Indices of the ``k`` largest scores, best first.

    Ties go to the lowest index, so the result is exactly the first ``k``
    entries of a stable descending sort.
    """
    s = np.asarray(scores)
    if s.ndim != 1:
        raise InvalidShape(f"argtopk expects a vector, got shape {s.shape}")
    n = s.shape[0]
    k = int(k)
    if k < 1 or k > n:
        raise InvalidK(f"k={k} outside [1, {n}]")
    if k == n:
        return np.argsort(-s, kind="stable")
    # Partition first, then sort only the candidates. Everything tied with
    # the k-th value is kept so the stable tie-break stays exact.
    kth = np.partition(-s, k - 1)[k - 1]
    cand = np.flatnonzero(-s <= kth)
    order = np.argsort(-s[cand], kind="stable")
    return cand[order[:k]]


def pool1d(scores, kernel, mode="max"):
    """Centered sliding-window pooling with truncated edge windows.

    No padding values enter the result: a boundary position pools over the
    elements that actually exist inside its window.
    """
    v = np.asarray(scores, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidShape(f"pool1d expects a vector, got shape {v.shape}")
    kernel = int(kernel)
    if kernel < 1 or kernel % 2 == 0:
        raise InvalidKernel(f"kernel must be a positive odd integer, got {kernel}")
    if mode not in ("max", "avg"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    n = v.shape[0]
    if kernel == 1 or n == 0:
        return v.copy()
    half = kernel // 2
    if mode == "max":
        padded = np.pad(v, half, constant_values=-np.inf)
        return sliding_window_view(padded, kernel).max(axis=1)
    csum = np.concatenate(([0.0], np.cumsum(v)))
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def running_minmax_update(acc_min, acc_max, x):
    """Fold one vector into elementwise min/max accumulators.

    Returns new arrays; the inputs are not modified.
    """
    acc_min = np.asarray(acc_min)
    acc_max = np.asarray(acc_max)
    x = np.asarray(x)
    if not (acc_min.shape == acc_max.shape == x.shape):
        raise InvalidShape(
            f"shape mismatch: min {acc_min.shape}, max {acc_max.shape}, x {x.shape}"
        )
    return np.minimum(acc_min, x), np.maximum(acc_max, x)
