"""Write a session to a KVTR trace, read it back and run a method on it."""
import os
import tempfile

from kvcompress import MethodConfig, WorkloadSpec, generate_workload, read_trace, run_session, write_trace

ses = generate_workload(WorkloadSpec("planted_needles", seq_len=2048, decode_steps=4, num_groups=2,
                                     heads_per_group=4, head_dim=64, needle_count=64, seed=9))
path = os.path.join(tempfile.mkdtemp(), "session.kvtr")
n = write_trace(path, ses)
print(f"wrote {n} bytes to {path}")

back = read_trace(path)
print(f"read back: G={back.layout.num_groups} H={back.layout.heads_per_group} d={back.layout.head_dim},"
      f" {len(back.turns)} turn(s), {back.turns[0].prompt_len} prompt tokens")
a = run_session(ses, MethodConfig("RocketKV", 256))
b = run_session(back, MethodConfig("RocketKV", 256))
print(f"recall from memory {a.mean_recall:.4f}, from file {b.mean_recall:.4f}")
