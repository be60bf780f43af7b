"""
Two-axis estimation vs its single-axis degenerations at an equal traffic budget.

Quest-like reads every head dim of coarse pages; SparQ-like reads a few dims
of every token; HSA splits the budget across both axes.
"""
import sys

import numpy as np

from kvcompress import MethodConfig, WorkloadSpec, generate_workload, run_session

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
methods = ("HSA", "SparQ", "Quest", "ExactTopK")
recalls = {m: [] for m in methods}
for seed in range(n_seeds):
    ses = generate_workload(WorkloadSpec("planted_needles", seq_len=8192, heads_per_group=4, head_dim=128,
                                         needle_count=256, needle_margin=5.0, seed=seed))
    for m in methods:
        rep = run_session(ses, MethodConfig(m, 256))
        recalls[m].append(rep.mean_recall)
    print(f"seed {seed}: " + "  ".join(f"{m}={recalls[m][-1]:.3f}" for m in methods))

print()
for m in methods:
    print(f"{m:<10} mean recall {np.mean(recalls[m]):.3f}")
