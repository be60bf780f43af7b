import numpy as np
import pytest

from kvcompress import DecodeReport, MethodConfig, WorkloadSpec, generate_workload, run_session, sweep
from kvcompress.errors import InvalidConfig, NumericalFailure
from kvcompress.planner import Method
from kvcompress.session import SweepCell

SMALL = WorkloadSpec("planted_needles", seq_len=1024, decode_steps=4, num_groups=2, heads_per_group=2,
                     head_dim=32, needle_count=32, seed=11)


@pytest.fixture(scope="module")
def session():
    return generate_workload(SMALL)


def test_full_kv_is_exact(session):
    rep = run_session(session, MethodConfig("FullKV", 256))
    assert rep.mean_output_l2 == 0.0
    assert rep.mean_recall == 1.0
    assert rep.max_seq_len == 1024 + 4


def test_exact_topk_all_tokens_matches_dense(session):
    rep = run_session(session, MethodConfig("ExactTopK", 100000))
    assert rep.mean_output_l2 < 1e-5
    assert rep.mean_recall == 1.0


def test_exact_topk_recall_one(session):
    rep = run_session(session, MethodConfig("ExactTopK", 64))
    assert rep.mean_recall == 1.0
    assert rep.mean_traffic == 64


@pytest.mark.parametrize("method", ["SnapKV", "HSA", "Quest", "SparQ", "RocketKV", "RocketKV_MT"])
def test_every_method_runs(session, method):
    rep = run_session(session, MethodConfig(method, 128))
    assert isinstance(rep, DecodeReport)
    assert len(rep.steps) == 4
    for s in rep.steps:
        assert 0.0 <= s.recall_at_k <= 1.0
        assert np.isfinite(s.output_l2)
    assert rep.unique_topk_count <= rep.max_seq_len


def test_rocketkv_mt_single_turn_bit_identical(session):
    a = run_session(session, MethodConfig("RocketKV", 128), keep_outputs=True)
    b = run_session(session, MethodConfig("RocketKV_MT", 128), keep_outputs=True)
    for x, y in zip(a.outputs, b.outputs):
        assert x.tobytes() == y.tobytes()
    assert [s.traffic_tokens for s in a.steps] == [s.traffic_tokens for s in b.steps]


def test_mt_storage_keeps_every_token():
    spec = WorkloadSpec("shifting_turns", seq_len=2048, decode_steps=2, turns=2, head_dim=32, needle_count=16)
    ses = generate_workload(spec)
    plain = run_session(ses, MethodConfig("RocketKV", 128))
    mt = run_session(ses, MethodConfig("RocketKV_MT", 128))
    total_after_turn1 = 2048 + 1
    # MT storage counts the full history plus summaries; plain only retained tokens
    assert mt.steps[0].storage_tokens > total_after_turn1
    assert plain.steps[0].storage_tokens < mt.steps[0].storage_tokens
    assert len(mt.plans) == 2


def test_hsa_family_traffic_within_budget():
    spec = WorkloadSpec("planted_needles", seq_len=4096, decode_steps=4, head_dim=64, needle_count=64)
    ses = generate_workload(spec)
    for m in ("HSA", "Quest", "SparQ", "RocketKV", "RocketKV_MT"):
        rep = run_session(ses, MethodConfig(m, 256))
        page = rep.plans[0]["page_len"]
        assert rep.max_traffic <= 256 + page, m


def test_overrides_are_applied(session):
    rep = run_session(session, MethodConfig("HSA", 128, page_len=2, k1=8, k2=40))
    p = rep.plans[0]
    assert (p["page_len"], p["k1"], p["k2"]) == (2, 8, 40)
    with pytest.raises(InvalidConfig):
        run_session(session, MethodConfig("HSA", 128, k1=64))


def test_static_split(session):
    rep = run_session(session, MethodConfig("RocketKV", 128, split_factor=0.7))
    assert rep.plans[0]["split"] == 0.7
    assert rep.split_factor == 0.7


@pytest.mark.parametrize("kw", [dict(method="DuoAttention"), dict(method="Nope"), dict(method="HSA", budget=1),
                                dict(method="SnapKV", kernel=4), dict(method="HSA", pool="min"),
                                dict(method="RocketKV", split_factor=1.2), dict(method="HSA", k1=0)])
def test_method_config_validation(kw):
    with pytest.raises(InvalidConfig):
        MethodConfig(**kw)


def test_defaults_for_window_and_kernel():
    assert MethodConfig("RocketKV").window_for(1) == 32
    assert MethodConfig("RocketKV").window_for(3) == 128
    assert MethodConfig("RocketKV").kernel_for() == 63
    assert MethodConfig("SnapKV").kernel_for() == 7


def test_non_finite_output_raises(session):
    bad = generate_workload(SMALL)
    bad.turns[0].step_values[2, 1, 0] = np.inf
    with pytest.raises(NumericalFailure) as exc:
        run_session(bad, MethodConfig("FullKV", 128))
    assert exc.value.step == 2


def test_sweep_grid_and_single_cell(session):
    res = sweep([SMALL], ["RocketKV", "ExactTopK"], [256, 512])
    assert len(res) == 4
    assert [(c.config.method.value, c.config.budget) for c, _ in res] == [
        ("RocketKV", 256), ("RocketKV", 512), ("ExactTopK", 256), ("ExactTopK", 512)]
    (cell, rep), = sweep([SMALL], ["RocketKV"], [256])
    direct = run_session(generate_workload(SMALL), MethodConfig("RocketKV", 256))
    assert rep.aggregate() == direct.aggregate()


def test_sweep_split_grid():
    splits = [0.3, 0.4, 0.5, 0.6, 0.7, None]
    res = sweep([SMALL], ["RocketKV"], [128, 256], splits)
    assert len(res) == 12
    assert [c.config.split_factor for c, _ in res[:6]] == splits


def test_sweep_parallel_matches_serial():
    a = sweep([SMALL], ["RocketKV", "SnapKV"], [128, 256], workers=1)
    b = sweep([SMALL], ["RocketKV", "SnapKV"], [128, 256], workers=3)
    assert [r.aggregate() for _, r in a] == [r.aggregate() for _, r in b]


def test_sweep_empty_axis():
    with pytest.raises(InvalidConfig):
        sweep([SMALL], [], [128])


def test_snapkv_per_head_traffic_grows_with_generation():
    spec = WorkloadSpec("planted_needles", seq_len=2048, decode_steps=5, heads_per_group=4, head_dim=32,
                        needle_count=32)
    rep = run_session(generate_workload(spec), MethodConfig("SnapKV", 256))
    # every head keeps budget / H prompt tokens plus its own copy of each generated token
    assert [s.traffic_tokens for s in rep.steps] == [256 + 4 * (g + 1) for g in range(5)]
