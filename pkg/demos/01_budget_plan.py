"""How a token budget gets split between prompt eviction and sparse attention."""
from kvcompress import cost_table, make_plan

# 32k-token prompt, 512-token budget, 128-dim heads
plan = make_plan(32768, 512, 128)
print(f"compression ratio c = {plan.ratio:g}, split r = {plan.split:.2f}")
print(f"  prompt eviction keeps {plan.stage1_tokens} tokens  ({plan.stage1_ratio:.2f}x)")
print(f"  sparse attention      ({plan.stage2_ratio:.2f}x) = page len {plan.page_len}"
      f" x head ratio {plan.head_ratio:.2f}")
print(f"  per step: read {plan.k1}/{plan.head_dim} dims of every page summary, fetch {plan.k2} tokens")

# normalized storage / traffic per method, Full-KV == 1
print()
print(f"{'method':<13}{'c':>6}{'storage':>10}{'traffic':>10}")
for row in cost_table([8, 64, 512]):
    print(f"{row.method:<13}{row.ratio:>6g}{row.storage:>10.4f}{row.traffic:>10.4f}")
