"""Ground-truth attention and the evaluation metrics built on it."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, InvalidK, InvalidShape
from .numerics import argtopk, stable_softmax

__all__ = [
    "dense_attention",
    "group_logits",
    "exact_topk_indices",
    "recall",
    "relative_l2",
    "cosine_distance",
    "UniqueTopkTracker",
    "empirical_cdf",
]


def dense_attention(q_group, keys, values):
    """Full scaled softmax attention for every head of a group, in float64."""
    q = np.atleast_2d(np.asarray(q_group, dtype=np.float64))
    K = np.asarray(keys, dtype=np.float64)
    V = np.asarray(values, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] == 0:
        raise InvalidShape("dense attention needs a nonempty (n, d) key matrix")
    if V.shape[0] != K.shape[0] or q.shape[1] != K.shape[1]:
        raise InvalidShape(f"shape mismatch: q {q.shape}, K {K.shape}, V {V.shape}")
    logits = (q @ K.T) / math.sqrt(K.shape[1])
    return stable_softmax(logits, axis=1) @ V


def group_logits(q_group, keys):
    """Unscaled logits summed over the heads of a group, one per key row."""
    q = np.atleast_2d(np.asarray(q_group, dtype=np.float64))
    return np.asarray(keys, dtype=np.float64) @ q.sum(axis=0)


def exact_topk_indices(q_group, keys, k):
    """Row indices of the ``k`` largest group-summed logits, ascending."""
    n = np.asarray(keys).shape[0]
    if not 1 <= k <= n:
        raise InvalidK(f"k={k} outside [1, {n}]")
    return np.sort(argtopk(group_logits(q_group, keys), k))


def recall(predicted, oracle):
    oracle = np.unique(np.asarray(oracle))
    if oracle.size == 0:
        raise InvalidInput("recall against an empty oracle set")
    hits = np.intersect1d(np.asarray(predicted), oracle, assume_unique=False).size
    return hits / oracle.size


def relative_l2(approx, exact):
    exact = np.asarray(exact, dtype=np.float64)
    err = np.linalg.norm(np.asarray(approx, dtype=np.float64) - exact)
    ref = np.linalg.norm(exact)
    return float(err / ref) if ref > 0 else float(err)


def cosine_distance(approx, exact):
    a = np.asarray(approx, dtype=np.float64).ravel()
    b = np.asarray(exact, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0 if na == nb else 1.0
    return float(max(0.0, 1.0 - (a @ b) / (na * nb)))


@dataclass
class UniqueTopkTracker:
    """Running union of oracle top-k positions across decode steps."""

    seen: set = field(default_factory=set)
    counts: list = field(default_factory=list)

    def update(self, indices):
        self.seen.update(int(i) for i in np.asarray(indices).ravel())
        self.counts.append(len(self.seen))
        return len(self.seen)

    @property
    def count(self):
        return len(self.seen)


def empirical_cdf(samples):
    """Sorted sample values with cumulative fractions ``i / n``."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if x.size == 0:
        return x, x
    return x, np.arange(1, x.size + 1) / x.size
