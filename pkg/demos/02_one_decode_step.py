"""One sparse-attention decode step next to the exact top-k oracle."""
import numpy as np

from kvcompress import KvStore, dense_attention, exact_topk_indices, hsa_step, make_plan, recall
from kvcompress.metrics import relative_l2

rng = np.random.default_rng(0)
S, H, d, t = 4096, 4, 128, 256

keys = rng.standard_normal((S, d)).astype(np.float32)
values = rng.standard_normal((S, d)).astype(np.float32)
q = rng.standard_normal((H, d))
# a handful of tokens the query really cares about
hot = rng.choice(S, 40, replace=False)
keys[hot] += (12.0 * q.sum(axis=0) / np.linalg.norm(q.sum(axis=0))).astype(np.float32)

plan = make_plan(S, t, d, split=0.0)  # no eviction: all compression in this step
store = KvStore.from_arrays(keys, values, page_len=plan.page_len)
out, trace = hsa_step(q, store, plan.step_config(store))

oracle = exact_topk_indices(q, keys, trace.selected_tokens.size)
print(f"page len {plan.page_len}, dims read {trace.dims.size}/{d}, tokens fetched {trace.selected_tokens.size}")
print(f"traffic {trace.traffic_tokens:.1f} token-equivalents (budget {t}, full cache {S})")
print(f"recall vs exact top-k: {recall(trace.selected_tokens, oracle):.3f}")
print(f"hot tokens fetched: {np.isin(hot, trace.selected_tokens).sum()}/{hot.size}")
print(f"output rel. L2 error vs dense: {relative_l2(out, dense_attention(q, keys, values)):.4f}")
