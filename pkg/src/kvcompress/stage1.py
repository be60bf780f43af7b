"""
Coarse-grain prompt eviction driven by observation-window attention.

The last ``w`` queries of the input attend (causally) over the whole input;
their attention probabilities are summed over window rows and over all heads
of the group, pooled along the sequence, and the best ``t1 - w`` positions
are kept together with the window itself.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceedsSequence, InvalidConfig, InvalidShape, InvalidWindow
from .numerics import argtopk, pool1d, stable_softmax

__all__ = ["Stage1Config", "window_scores", "select_stage1", "snapkv_keep"]


@dataclass(frozen=True)
class Stage1Config:
    budget: int
    window: int = 32
    kernel: int = 63
    pool: str = "max"

    def __post_init__(self):
        if self.window < 1:
            raise InvalidConfig("observation window must be >= 1")
        if self.budget < self.window:
            raise InvalidConfig(f"stage-1 budget {self.budget} smaller than window {self.window}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidConfig(f"pooling kernel must be odd and >= 1, got {self.kernel}")
        if self.pool not in ("max", "avg"):
            raise InvalidConfig(f"unknown pooling mode {self.pool!r}")


def window_scores(q_window, store, layout=None):
    """Aggregated window attention mass per stored token.

    ``q_window`` has shape ``(w, H, d)``; row ``t`` is the query of input
    position ``n - w + t`` and sees positions ``0 .. n - w + t``. Returns one
    nonnegative score per stored token (the sum of ``w * H`` probability
    rows).
    """
    q = np.asarray(q_window, dtype=np.float64)
    if q.ndim != 3:
        raise InvalidShape(f"q_window must be (w, H, d), got {q.shape}")
    w, H, d = q.shape
    if d != store.head_dim:
        raise InvalidShape(f"query head_dim {d} != store head_dim {store.head_dim}")
    if layout is not None and (H != layout.heads_per_group or d != layout.head_dim):
        raise InvalidShape("q_window does not match the group layout")
    n = store.stored_tokens
    if w > n:
        raise InvalidWindow(f"window {w} longer than the {n} stored tokens")
    keys = np.asarray(store.keys, dtype=np.float64)
    # row t may not see the window positions after it
    hidden = np.arange(n)[None, :] > (n - w + np.arange(w))[:, None]
    scale = 1.0 / np.sqrt(d)
    total = np.zeros(n)
    for h in range(H):
        logits = (q[:, h, :] @ keys.T) * scale
        total += stable_softmax(logits, axis=1, mask=hidden).sum(axis=0)
    return total


def select_stage1(scores, cfg):
    """Stored-token indices to keep, ascending, exactly ``cfg.budget`` of them."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    t1, w = int(cfg.budget), int(cfg.window)
    if t1 > n:
        raise BudgetExceedsSequence(f"stage-1 budget {t1} exceeds sequence length {n}")
    if w > n:
        raise InvalidWindow(f"window {w} longer than sequence {n}")
    if t1 == n:
        return np.arange(n)
    window = np.arange(n - w, n)
    picks = t1 - w
    if picks == 0:
        return window
    pooled = pool1d(scores[: n - w], cfg.kernel, cfg.pool)
    chosen = np.sort(argtopk(pooled, picks))
    return np.concatenate([chosen, window])


def snapkv_keep(q_window, store, cfg, layout=None):
    """Window scoring followed by pooled selection, in one call."""
    return select_stage1(window_scores(q_window, store, layout), cfg)
