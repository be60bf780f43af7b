"""Observation-window eviction keeps clustered needles and the window itself."""
import numpy as np

from kvcompress import KvStore, Stage1Config, WorkloadSpec, generate_workload, snapkv_keep

spec = WorkloadSpec("planted_needles", seq_len=8192, heads_per_group=4, head_dim=128,
                    needle_count=128, seed=1)
ses = generate_workload(spec)
turn = ses.turns[0]
keys = turn.prompt_keys[:, 0]
store = KvStore.from_arrays(keys, turn.prompt_values[:, 0])
needles = ses.needles[0][0]

w = 32
window_q = np.repeat(keys[-w:, None, :], spec.heads_per_group, axis=1)
for budget in (512, 1024, 2048):
    for kernel in (1, 7, 63):
        keep = snapkv_keep(window_q, store, Stage1Config(budget, w, kernel))
        kept = np.isin(needles, keep).mean()
        print(f"keep {budget:>5} of {spec.seq_len}, pooling kernel {kernel:>2}: {kept:6.1%} of needles survive")
