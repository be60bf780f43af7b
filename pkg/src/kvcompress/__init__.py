"""Two-stage KV-cache compression: prompt eviction plus hybrid sparse attention."""

from .errors import *  # noqa: F401,F403
from .hsa import EstimationTrace, HsaConfig, hsa_step, score_pages, select_dims, select_tokens, sparse_attention
from .kv_store import GroupLayout, KvStore
from .metrics import (UniqueTopkTracker, dense_attention, empirical_cdf, exact_topk_indices, recall)
from .numerics import argtopk, pool1d, running_minmax_update, stable_softmax
from .planner import BudgetPlan, CostRow, Method, cost_row, cost_table, make_plan, measured_footprint, split_factor
from .session import DecodeReport, MethodConfig, run_session, sweep
from .stage1 import Stage1Config, select_stage1, snapkv_keep, window_scores
from .trace import read_trace, write_trace
from .report import render, session_document, sweep_document, cost_document
from .workload import Session, Turn, WorkloadSpec, generate_workload

__version__ = "0.1.0"
