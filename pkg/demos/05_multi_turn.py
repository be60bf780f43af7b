"""Permanent eviction vs filter-only eviction when the second question changes topic."""
from kvcompress import MethodConfig, WorkloadSpec, generate_workload, run_session

spec = WorkloadSpec("shifting_turns", seq_len=8192, turns=2, heads_per_group=4, head_dim=64,
                    needle_count=128, seed=3)
ses = generate_workload(spec)

for method in ("RocketKV", "RocketKV_MT", "ExactTopK"):
    rep = run_session(ses, MethodConfig(method, 256))
    print(f"{method:<12} turn 1 recall {rep.turn_recall(0):.3f}   turn 2 recall {rep.turn_recall(1):.3f}"
          f"   storage {rep.steps[-1].storage_tokens:.0f} tok-eq   traffic {rep.mean_traffic:.1f}")

# turn-2 needles were irrelevant during turn 1; only the filter-only variant can still find them
