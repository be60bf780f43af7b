"""
Decode-session driver: runs one compression method over a :class:`Session`
and scores every step against dense attention and the exact top-k oracle.

Per turn and per group the driver

1. appends the turn's prompt to the reference cache and to the method's cache;
2. runs the method's prompt-time work (stage-1 eviction, per-head SnapKV
   selection, page re-planning);
3. for each decode step appends the generated token, computes the method's
   output and compares it with dense attention over the full history.

Stage-1 observation queries are taken from the keys of the last ``w`` input
tokens (one copy per head): the trace format carries no prompt-time queries.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product

import numpy as np

from .errors import InvalidConfig, NonFiniteInput, NumericalFailure
from .hsa import HsaConfig, hsa_step, sparse_attention
from .kv_store import KvStore
from .metrics import (
    UniqueTopkTracker,
    cosine_distance,
    dense_attention,
    exact_topk_indices,
    recall,
    relative_l2,
)
from .planner import Method, make_plan, measured_footprint, round_half_up
from .stage1 import Stage1Config, select_stage1, window_scores
from .workload import generate_workload

__all__ = ["MethodConfig", "StepRecord", "DecodeReport", "run_session", "sweep", "SweepCell"]

logger = logging.getLogger(__name__)

_HSA_FAMILY = (Method.HSA, Method.QUEST, Method.SPARQ, Method.ROCKETKV, Method.ROCKETKV_MT)
_SIMULATED = (Method.FULL_KV, Method.EXACT_TOPK, Method.SNAPKV) + _HSA_FAMILY


@dataclass(frozen=True)
class MethodConfig:
    """One method at one token budget, with optional overrides.

    ``split_factor`` of None means adaptive. ``window`` defaults to 32 for
    single-turn sessions and 128 for multi-turn ones; ``kernel`` defaults to
    63 inside RocketKV and 7 for standalone SnapKV.
    """

    method: Method
    budget: int = 256
    window: int = None
    kernel: int = None
    pool: str = "max"
    page_len: int = None
    k1: int = None
    k2: int = None
    split_factor: float = None
    track_k: int = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if self.method not in _SIMULATED:
            raise InvalidConfig(f"{self.method.value} has a cost-model row only; it cannot be simulated")
        if self.budget < 2:
            raise InvalidConfig("token budget must be >= 2")
        if self.pool not in ("max", "avg"):
            raise InvalidConfig(f"unknown pooling mode {self.pool!r}")
        if self.kernel is not None and (self.kernel < 1 or self.kernel % 2 == 0):
            raise InvalidConfig("pooling kernel must be odd and >= 1")
        for name in ("window", "page_len", "k1", "k2", "track_k"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.split_factor is not None and not 0.0 <= self.split_factor <= 1.0:
            raise InvalidConfig("split factor must lie in [0, 1]")

    def window_for(self, turns):
        if self.window is not None:
            return self.window
        return 32 if turns == 1 else 128

    def kernel_for(self):
        if self.kernel is not None:
            return self.kernel
        return 7 if self.method is Method.SNAPKV else 63

    def label(self):
        return self.method.value


@dataclass
class StepRecord:
    turn: int
    step: int
    recall_at_k: float
    output_l2: float
    output_cos: float
    traffic_tokens: float
    storage_tokens: float


@dataclass
class DecodeReport:
    method: str
    budget: int
    split_factor: object
    steps: list = field(default_factory=list)
    unique_topk_per_group: list = field(default_factory=list)
    max_seq_len: int = 0
    plans: list = field(default_factory=list)
    workload: dict = field(default_factory=dict)
    outputs: list = None

    @property
    def mean_recall(self):
        return float(np.mean([s.recall_at_k for s in self.steps]))

    @property
    def mean_output_l2(self):
        return float(np.mean([s.output_l2 for s in self.steps]))

    @property
    def mean_output_cos(self):
        return float(np.mean([s.output_cos for s in self.steps]))

    @property
    def mean_traffic(self):
        return float(np.mean([s.traffic_tokens for s in self.steps]))

    @property
    def max_traffic(self):
        return float(max(s.traffic_tokens for s in self.steps))

    @property
    def mean_storage(self):
        return float(np.mean([s.storage_tokens for s in self.steps]))

    @property
    def unique_topk_count(self):
        return int(max(self.unique_topk_per_group)) if self.unique_topk_per_group else 0

    def turn_recall(self, turn):
        vals = [s.recall_at_k for s in self.steps if s.turn == turn]
        return float(np.mean(vals))

    def aggregate(self):
        return {
            "mean_recall": self.mean_recall,
            "mean_output_l2": self.mean_output_l2,
            "mean_output_cos": self.mean_output_cos,
            "mean_traffic_tokens": self.mean_traffic,
            "max_traffic_tokens": self.max_traffic,
            "mean_storage_tokens": self.mean_storage,
            "unique_topk_count": self.unique_topk_count,
            "max_seq_len": self.max_seq_len,
        }


# -- per-group method state ------------------------------------------------


class _Dense:
    """Full-KV and Exact-TopK: the whole history stays resident."""

    def __init__(self, cfg, d, H, turns):
        self.cfg = cfg
        self.store = KvStore(d)

    def add_prompt(self, keys, values, positions):
        self.store.extend(keys, values, positions)

    def start_turn(self, turns):
        return None

    def append(self, k, v, pos):
        self.store.append(k, v, pos)

    def step(self, q):
        st = self.store
        if self.cfg.method is Method.FULL_KV:
            idx = st.active
        else:
            k = min(self.cfg.k2 or self.cfg.budget, st.active_count)
            idx = exact_topk_indices(q, st.keys, k)
        out = sparse_attention(q, st, idx)
        return out, st.positions[idx], float(idx.size)

    def storage(self):
        return float(self.store.stored_tokens)


class _SnapKV:
    """Standalone SnapKV: every head keeps its own token copy (budget / H each)."""

    def __init__(self, cfg, d, H, turns):
        self.cfg = cfg
        self.H = H
        self.heads = [KvStore(d) for _ in range(H)]

    def add_prompt(self, keys, values, positions):
        for st in self.heads:
            st.extend(keys, values, positions)

    def start_turn(self, turns):
        per_head = max(1, self.cfg.budget // self.H)
        for st in self.heads:
            n = st.stored_tokens
            if per_head >= n:
                continue
            w = min(self.cfg.window_for(turns), per_head, n)
            q_window = np.asarray(st.keys[n - w:], dtype=np.float64)[:, None, :]
            cfg = Stage1Config(per_head, w, self.cfg.kernel_for(), self.cfg.pool)
            st.apply_retention(select_stage1(window_scores(q_window, st), cfg), mt_mode=False)
        return None

    def append(self, k, v, pos):
        for st in self.heads:
            st.append(k, v, pos)

    def step(self, q):
        q = np.asarray(q, dtype=np.float64)
        out = np.empty_like(q)
        seen = []
        for h, st in enumerate(self.heads):
            out[h] = sparse_attention(q[h:h + 1], st, st.active)[0]
            seen.append(st.positions)
        attended = np.unique(np.concatenate(seen))
        traffic = float(sum(st.active_count for st in self.heads))
        return out, attended, traffic

    def storage(self):
        return float(sum(st.stored_tokens for st in self.heads))


class _Hsa:
    """HSA, Quest-like, SparQ-like, RocketKV and RocketKV-MT."""

    def __init__(self, cfg, d, H, turns):
        self.cfg = cfg
        self.d = d
        self.H = H
        self.mt = cfg.method is Method.ROCKETKV_MT
        self.store = KvStore(d, retain_all=self.mt)
        self.plan = None
        self.hsa = None

    def add_prompt(self, keys, values, positions):
        self.store.extend(keys, values, positions)

    def _plan(self, n_in, w):
        cfg, d, t = self.cfg, self.d, self.cfg.budget
        m = cfg.method
        if m in (Method.ROCKETKV, Method.ROCKETKV_MT):
            plan = make_plan(n_in, t, d, w, split=cfg.split_factor)
        elif m is Method.HSA:
            plan = make_plan(n_in, t, d, w, split=0.0 if cfg.split_factor is None else cfg.split_factor)
        else:
            plan = make_plan(n_in, t, d, w, split=0.0)
            if not plan.is_identity:
                c = plan.ratio
                if m is Method.QUEST:
                    L = max(1, math.ceil(c - 1e-9))
                    plan = replace(plan, page_len=L, k1=d, head_ratio=1.0)
                else:
                    k1 = min(max(round_half_up(d / c), 1), d)
                    plan = replace(plan, page_len=1, k1=k1, head_ratio=c)
        overrides = {k: v for k, v in (("page_len", cfg.page_len), ("k1", cfg.k1), ("k2", cfg.k2))
                     if v is not None}
        if overrides and not plan.is_identity:
            if overrides.get("k1", 1) > d:
                raise InvalidConfig(f"k1 override {overrides['k1']} exceeds head_dim {d}")
            plan = replace(plan, **overrides)
        return plan

    def start_turn(self, turns):
        st = self.store
        if self.mt:
            # every stored token is a candidate again at a turn boundary
            st.reset_active()
        n_in = st.stored_tokens
        w = min(self.cfg.window_for(turns), n_in)
        plan = self._plan(n_in, w)
        self.plan = plan
        uses_stage1 = self.cfg.method in (Method.ROCKETKV, Method.ROCKETKV_MT)
        if uses_stage1 and not plan.is_identity and plan.stage1_tokens < n_in:
            q_window = np.repeat(np.asarray(st.keys[n_in - w:], dtype=np.float64)[:, None, :],
                                 self.H, axis=1)
            s1cfg = Stage1Config(plan.stage1_tokens, w, self.cfg.kernel_for(), self.cfg.pool)
            keep = select_stage1(window_scores(q_window, st), s1cfg)
            st.apply_retention(keep, mt_mode=self.mt)
        st.set_page_len(1 if plan.is_identity else plan.page_len)
        self.hsa = None if plan.is_identity else plan.step_config(st)
        return plan

    def append(self, k, v, pos):
        self.store.append(k, v, pos)

    def step(self, q):
        st = self.store
        if self.hsa is None:
            idx = st.active
            out = sparse_attention(q, st, idx)
            return out, st.positions[idx], float(idx.size)
        out, trace = hsa_step(q, st, self.plan.step_config(st))
        return out, st.positions[trace.selected_tokens], trace.traffic_tokens

    def storage(self):
        return measured_footprint(self.store, self.plan)[0]


def _runner(cfg, d, H, turns):
    if cfg.method in (Method.FULL_KV, Method.EXACT_TOPK):
        return _Dense(cfg, d, H, turns)
    if cfg.method is Method.SNAPKV:
        return _SnapKV(cfg, d, H, turns)
    return _Hsa(cfg, d, H, turns)


def run_session(session, cfg, keep_outputs=False):
    """Run ``cfg`` over every turn and decode step of ``session``."""
    layout = session.layout
    G, H, d = layout.num_groups, layout.heads_per_group, layout.head_dim
    n_turns = len(session.turns)
    refs = [KvStore(d) for _ in range(G)]
    runners = [_runner(cfg, d, H, n_turns) for _ in range(G)]
    trackers = [UniqueTopkTracker() for _ in range(G)]
    report = DecodeReport(
        method=cfg.label(),
        budget=cfg.budget,
        split_factor="adaptive" if cfg.split_factor is None else cfg.split_factor,
        workload=dict(session.meta),
    )
    outputs = [] if keep_outputs else None
    position = 0
    global_step = 0
    for t_idx, turn in enumerate(session.turns):
        n_new = turn.prompt_len
        pos = np.arange(position, position + n_new, dtype=np.int64)
        position += n_new
        turn_plans = []
        for g in range(G):
            refs[g].extend(turn.prompt_keys[:, g], turn.prompt_values[:, g], pos)
            runners[g].add_prompt(turn.prompt_keys[:, g], turn.prompt_values[:, g], pos)
            plan = runners[g].start_turn(n_turns)
            if plan is not None:
                turn_plans.append(asdict(plan))
        if turn_plans:
            report.plans.append(turn_plans[0])
        for s in range(turn.decode_steps):
            rec = np.zeros(5)
            step_out = np.empty((G, H, d))
            for g in range(G):
                k, v = turn.step_keys[s, g], turn.step_values[s, g]
                refs[g].append(k, v, position)
                runners[g].append(k, v, position)
                q = turn.queries[s, g].astype(np.float64)
                ref = refs[g]
                try:
                    out, attended, traffic = runners[g].step(q)
                    dense = dense_attention(q, ref.keys, ref.values)
                except NonFiniteInput:
                    raise NumericalFailure(global_step) from None
                if not np.isfinite(out).all():
                    raise NumericalFailure(global_step)
                k_eval = min(max(int(attended.size), 1), ref.stored_tokens)
                track_k = min(cfg.track_k or cfg.budget, ref.stored_tokens)
                oracle = exact_topk_indices(q, ref.keys, k_eval)
                trackers[g].update(exact_topk_indices(q, ref.keys, track_k)
                                   if track_k != k_eval else oracle)
                rec += (
                    recall(attended, ref.positions[oracle]),
                    relative_l2(out, dense),
                    cosine_distance(out, dense),
                    traffic,
                    runners[g].storage(),
                )
                step_out[g] = out
            position += 1
            rec /= G
            report.steps.append(StepRecord(t_idx, s, *map(float, rec)))
            if outputs is not None:
                outputs.append(step_out)
            global_step += 1
        report.max_seq_len = position
    report.unique_topk_per_group = [tr.count for tr in trackers]
    report.outputs = outputs
    return report


# -- sweeps ------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    workload: object
    config: MethodConfig


def _run_cell(cell):
    return run_session(generate_workload(cell.workload), cell.config)


def sweep(workloads, methods, budgets, splits=(None,), workers=1, base=None):
    """Run every (workload, method, budget, split) combination.

    Rows come back in grid order regardless of ``workers``. ``base`` is a
    :class:`MethodConfig` whose overrides are applied to every cell.
    """
    workloads, methods, budgets, splits = map(list, (workloads, methods, budgets, splits))
    if not (workloads and methods and budgets and splits):
        raise InvalidConfig("sweep grid has an empty axis")
    cells = []
    for wl, m, t, r in product(workloads, methods, budgets, splits):
        if base is None:
            cfg = MethodConfig(m, t, split_factor=r)
        else:
            cfg = replace(base, method=Method.parse(m), budget=t, split_factor=r)
        cells.append(SweepCell(wl, cfg))
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_cell, cells))
    else:
        reports = [_run_cell(c) for c in cells]
    return list(zip(cells, reports))
