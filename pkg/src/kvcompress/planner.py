"""
Budget decomposition and the normalized storage/traffic cost model.

A token budget ``t`` over a prompt of ``S`` tokens gives a compression ratio
``c = S / t``. The ratio is split as ``c**r`` for prompt eviction and
``c**(1 - r)`` for sparse attention, and the sparse-attention share is split
again between page length (sequence dim) and head-dim reduction.
"""

import enum
import math
from dataclasses import dataclass

from .errors import BudgetTooSmall, InvalidConfig, InvalidRatio
from .hsa import HsaConfig

__all__ = [
    "Method",
    "BudgetPlan",
    "CostRow",
    "split_factor",
    "make_plan",
    "cost_row",
    "cost_table",
    "measured_footprint",
]

_R_MIN, _R_MAX = 0.2, 0.8
# ceil() of a power that should land on an integer must not round up on noise
_CEIL_SLACK = 1e-9


class Method(str, enum.Enum):
    FULL_KV = "FullKV"
    EXACT_TOPK = "ExactTopK"
    DUO_ATTENTION = "DuoAttention"
    SNAPKV = "SnapKV"
    HSA = "HSA"
    QUEST = "Quest"
    SPARQ = "SparQ"
    ROCKETKV = "RocketKV"
    ROCKETKV_MT = "RocketKV_MT"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        for m in cls:
            if m.value.lower() == key or m.name.lower() == key:
                return m
        raise InvalidConfig(f"unknown method {name!r}")

    def __str__(self):
        return self.value


def round_half_up(x):
    return int(math.floor(x + 0.5))


def split_factor(c):
    """Adaptive split exponent ``clamp(0.2 + 0.06 * log2(c), 0.2, 0.8)``."""
    if not (c >= 1):
        raise InvalidRatio(f"compression ratio must be >= 1, got {c}")
    return min(max(_R_MIN + 0.06 * math.log2(c), _R_MIN), _R_MAX)


@dataclass(frozen=True)
class BudgetPlan:
    seq_len: int
    budget: int
    ratio: float
    split: float
    stage1_tokens: int
    page_len: int
    head_ratio: float
    k1: int
    k2: int
    head_dim: int
    window: int

    @property
    def est_budget(self):
        return self.budget / 2

    @property
    def fetch_budget(self):
        return self.budget / 2

    @property
    def stage1_ratio(self):
        return self.ratio ** self.split

    @property
    def stage2_ratio(self):
        return self.ratio ** (1.0 - self.split)

    @property
    def is_identity(self):
        return self.seq_len <= self.budget

    def step_k1(self, num_pages, fetched):
        """Head dims to read this step so estimation plus fetch stays within ``t + L``.

        Rounding ``k1`` half-up and pages opened by generated tokens can push
        the estimation share a little past ``t / 2``; the planned ``k1`` is
        lowered just enough to absorb that.
        """
        if self.is_identity or num_pages == 0:
            return self.k1
        room = (self.budget + self.page_len - fetched) * 2 * self.head_dim
        return max(1, min(self.k1, int(room // num_pages)))

    def step_config(self, store):
        """:class:`HsaConfig` for one decode step over ``store``."""
        fetched = min(self.k2, store.active_count)
        return HsaConfig(self.step_k1(store.num_pages, fetched), self.k2, self.page_len)


def make_plan(S, t, d, w=32, split=None):
    """Derive every per-group compression quantity for ``S`` prompt tokens at budget ``t``.

    ``split`` overrides the adaptive exponent (static sweeps use 0.3-0.7;
    ``0`` sends all compression to sparse attention). When ``S <= t`` the
    identity plan is returned: no eviction, page length 1, all dims and
    every token fetched.
    """
    if t < 2:
        raise BudgetTooSmall(f"token budget must be >= 2, got {t}")
    if S < 1 or d < 1 or w < 1:
        raise InvalidConfig("S, d and w must all be >= 1")
    c = S / t
    if S <= t:
        r = _R_MIN if split is None else float(split)
        return BudgetPlan(S, t, c, r, S, 1, 1.0, d, S, d, w)
    if split is None:
        r = split_factor(c)
    else:
        r = float(split)
        if not 0.0 <= r <= 1.0:
            raise InvalidConfig(f"split factor must lie in [0, 1], got {r}")
    t1 = min(max(round_half_up(S * c ** (-r)), max(t, w)), S)
    L = max(1, math.ceil(c ** ((1.0 - r) / 2) - _CEIL_SLACK))
    h = c ** (1.0 - r) / L
    k1 = min(max(round_half_up(d / h), 1), d)
    k2 = max(1, t // 2)
    return BudgetPlan(S, t, c, r, t1, L, h, k1, k2, d, w)


@dataclass(frozen=True)
class CostRow:
    method: str
    ratio: float
    storage: float
    traffic: float


def cost_row(method, c):
    """Normalized storage and traffic (Full-KV == 1) at compression ratio ``c``."""
    m = Method.parse(method)
    if not (c >= 1):
        raise InvalidRatio(f"compression ratio must be >= 1, got {c}")
    c = float(c)
    if m is Method.FULL_KV:
        return CostRow(m.value, c, 1.0, 1.0)
    if m in (Method.DUO_ATTENTION, Method.SNAPKV):
        storage = 1.0 / c
    elif m is Method.QUEST:
        storage = 1.0 + 1.0 / c
    elif m is Method.SPARQ:
        storage = 2.0
    elif m in (Method.ROCKETKV, Method.ROCKETKV_MT):
        r = split_factor(c)
        overhead = 2.0 / c ** ((1.0 + r) / 2)
        storage = (1.0 / c ** r if m is Method.ROCKETKV else 1.0) + overhead
    else:
        raise InvalidConfig(f"no cost-model row for {m.value}")
    return CostRow(m.value, c, storage, 1.0 / c)


COST_METHODS = (
    Method.FULL_KV,
    Method.DUO_ATTENTION,
    Method.SNAPKV,
    Method.QUEST,
    Method.SPARQ,
    Method.ROCKETKV,
    Method.ROCKETKV_MT,
)


def cost_table(ratios, methods=COST_METHODS):
    return [cost_row(m, c) for c in ratios for m in methods]


def measured_footprint(store, plan):
    """Element-exact (storage, traffic) of one group in token-equivalents.

    One token-equivalent is ``2 * d`` elements (a key plus a value). Storage
    counts every stored token plus both summary tensors; traffic counts
    the step's ``k1`` summary elements per active page plus the fetched
    tokens.
    """
    if plan.is_identity:
        n = store.stored_tokens
        return float(n), float(store.active_count)
    d = store.head_dim
    summary_elements = 2 * d * store.num_pages
    storage = store.stored_tokens + summary_elements / (2 * d)
    fetched = min(plan.k2, store.active_count)
    k1 = plan.step_k1(store.num_pages, fetched)
    traffic = store.summary_traffic_elements(k1) / (2 * d) + fetched
    return float(storage), float(traffic)
