"""How many distinct tokens the exact top-k touches over a decode."""
import numpy as np

from kvcompress import MethodConfig, WorkloadSpec, generate_workload, run_session
from kvcompress.report import topk_cdf

k = 64
pairs = []
for i in range(20):
    spec = WorkloadSpec("planted_needles", seq_len=1024 + 256 * i, decode_steps=32, head_dim=64,
                        needle_count=128, seed=i)
    rep = run_session(generate_workload(spec), MethodConfig("ExactTopK", k, track_k=k))
    pairs.append((rep.max_seq_len, rep.unique_topk_count))

cdf = topk_cdf(pairs)
x, f = cdf["unique_topk"]
print(f"top-{k} over 32 steps touched {int(x.min())}..{int(x.max())} distinct tokens")
for q in (0.25, 0.5, 0.75, 1.0):
    print(f"  {q:4.0%} of sessions touched <= {int(x[np.searchsorted(f, q)])} tokens")
# a fixed eviction set of size k would have missed everything above k
