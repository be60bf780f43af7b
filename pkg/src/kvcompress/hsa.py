"""
Hybrid sparse attention: two-dimensional top-k estimation for one decode step.

For a group query ``q`` of shape ``(H, d)``:

1. pick the ``k1`` head dimensions with the largest ``sum_h |q[h]|`` and
   record the sign of ``sum_h q[h]`` on each of them;
2. score every page of the active sequence by reading, per selected dim, the
   page max (positive sign) or min (negative sign) and taking the dot product
   with the summed query;
3. expand the best pages to ``k2`` tokens and run exact attention over them.

Every head of the group shares one selection. With ``page_len == 1`` and
``k1 == d`` the estimate is the exact group-summed logit.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCache, EmptySelection, InvalidConfig, InvalidShape
from .numerics import argtopk, stable_softmax

__all__ = [
    "HsaConfig",
    "EstimationTrace",
    "select_dims",
    "score_pages",
    "select_tokens",
    "sparse_attention",
    "hsa_step",
]


@dataclass(frozen=True)
class HsaConfig:
    k1: int
    k2: int
    page_len: int = 1

    def __post_init__(self):
        if self.k1 < 1:
            raise InvalidConfig("k1 must be >= 1")
        if self.k2 < 1:
            raise InvalidConfig("k2 must be >= 1")
        if self.page_len < 1:
            raise InvalidConfig("page_len must be >= 1")


@dataclass
class EstimationTrace:
    dims: np.ndarray
    signs: np.ndarray
    page_scores: np.ndarray
    selected_pages: np.ndarray
    selected_tokens: np.ndarray
    est_elements: int = 0
    fetch_elements: int = 0
    head_dim: int = field(default=1, repr=False)

    @property
    def traffic_tokens(self):
        """Estimation plus fetch traffic in token-equivalents (2d elements each)."""
        return (self.est_elements + self.fetch_elements) / (2 * self.head_dim)


def _as_group_query(q_group, d=None):
    q = np.asarray(q_group, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2 or q.shape[0] < 1:
        raise InvalidShape(f"group query must be (H, d), got {q.shape}")
    if d is not None and q.shape[1] != d:
        raise InvalidShape(f"query head_dim {q.shape[1]} != {d}")
    return q


def select_dims(q_group, k1):
    """Top-``k1`` head dims by summed magnitude, with summed-query signs (0 -> +1)."""
    q = _as_group_query(q_group)
    if k1 > q.shape[1]:
        raise InvalidConfig(f"k1={k1} exceeds head_dim {q.shape[1]}")
    dims = argtopk(np.abs(q).sum(axis=0), k1)
    signs = np.where(q[:, dims].sum(axis=0) >= 0, 1, -1).astype(np.int8)
    return dims, signs


def score_pages(q_group, store, dims, signs):
    """Upper-bound style logit estimate for every active page."""
    q = _as_group_query(q_group, store.head_dim)
    if store.active_count == 0:
        raise EmptyCache("no active tokens to score")
    dims = np.asarray(dims)
    signs = np.asarray(signs)
    order = np.argsort(dims, kind="stable")
    dims, signs = dims[order], signs[order]
    q_sum = q[:, dims].sum(axis=0)
    # only these k1 rows of the summaries are read
    fetched = np.where((signs >= 0)[:, None], store.summary_max[dims], store.summary_min[dims])
    return q_sum @ fetched.astype(np.float64)


def select_tokens(page_scores, store, k2):
    """Expand the best pages into exactly ``min(k2, active)`` stored-token indices.

    Pages are taken in score order until they cover ``k2`` tokens; the last
    (lowest scoring) page taken is truncated to its earliest tokens. Returns
    ``(tokens ascending, pages in selection order)``.
    """
    s1 = np.asarray(page_scores, dtype=np.float64)
    L = store.page_len
    n_act = store.active_count
    if s1.shape[0] != store.num_pages:
        raise InvalidShape("one score per active page expected")
    if k2 < 1:
        raise InvalidConfig("k2 must be >= 1")
    if k2 >= n_act:
        return store.active.copy(), np.arange(store.num_pages)
    # a short final page can force one page beyond ceil(k2 / L)
    need = min(store.num_pages, -(-k2 // L) + 1)
    ranked = argtopk(s1, need)
    taken, pages, remaining = [], [], k2
    for p in ranked:
        members = store.page_members(int(p))
        if members.size > remaining:
            members = members[:remaining]
        taken.append(members)
        pages.append(int(p))
        remaining -= members.size
        if remaining == 0:
            break
    tokens = np.sort(np.concatenate(taken))
    return tokens, np.asarray(pages, dtype=np.int64)


def sparse_attention(q_group, store, tokens):
    """Scaled softmax attention of every head over the same token subset."""
    q = _as_group_query(q_group, store.head_dim)
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise EmptySelection("sparse attention over an empty selection")
    keys, values = store.gather(tokens)
    logits = (q @ keys.astype(np.float64).T) / math.sqrt(store.head_dim)
    return stable_softmax(logits, axis=1) @ values.astype(np.float64)


def hsa_step(q_group, store, cfg):
    """One decode step: estimate, select, attend. Returns ``(output, trace)``."""
    q = _as_group_query(q_group, store.head_dim)
    if cfg.page_len != store.page_len:
        raise InvalidConfig(f"config page_len {cfg.page_len} != store page_len {store.page_len}")
    dims, signs = select_dims(q, cfg.k1)
    s1 = score_pages(q, store, dims, signs)
    tokens, pages = select_tokens(s1, store, cfg.k2)
    out = sparse_attention(q, store, tokens)
    d = store.head_dim
    trace = EstimationTrace(
        dims=dims,
        signs=signs,
        page_scores=s1,
        selected_pages=pages,
        selected_tokens=tokens,
        est_elements=store.summary_traffic_elements(cfg.k1),
        fetch_elements=2 * d * int(tokens.size),
        head_dim=d,
    )
    return out, trace
