import csv
import io
import json
import subprocess
import sys

import pytest

from kvcompress.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main
from kvcompress.trace import encode_trace

SMALL = ["--seq-len", "512", "--decode-steps", "2", "--head-dim", "16", "--needle-count", "16"]


def run(args, capsys):
    code = main(args)
    return code, capsys.readouterr().out


def test_cost_table_csv(capsys):
    code, out = run(["cost-table", "--ratios", "4,64", "--format", "csv"], capsys)
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 14
    rk = next(r for r in rows if r["method"] == "RocketKV" and r["compression_ratio"] == "64.0")
    assert float(rk["storage"]) == pytest.approx(0.1754, abs=5e-4)
    assert float(rk["traffic"]) == 0.015625


def test_simulate_json(capsys):
    code, out = run(["simulate", "--method", "RocketKV", "--budget", "64", *SMALL], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["summary"]["method"] == "RocketKV"
    assert doc["summary"]["seq_len"] == 512


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"method": "SnapKV", "budget": 64, "seq-len": 512, "decode_steps": 2,
                               "head_dim": 16, "needle_count": 16, "format": "csv"}))
    code, out = run(["simulate", "--config", str(cfg), "--method", "HSA"], capsys)
    assert code == EXIT_OK
    row = next(csv.DictReader(io.StringIO(out)))
    assert row["method"] == "HSA" and row["budget"] == "64"


def test_sweep_rows_and_out_file(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code, _ = run(["sweep", "--method", "RocketKV,ExactTopK", "--budget", "64,128", "--split-factor",
                   "adaptive,0.5", *SMALL, "--format", "csv", "--out", str(out)], capsys)
    assert code == EXIT_OK
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 8


def test_sweep_byte_identical_across_runs_and_workers(tmp_path):
    args = ["sweep", "--method", "RocketKV,SparQ", "--budget", "64,128", "--seed", "1,2", *SMALL]
    paths = []
    for i, workers in enumerate(["1", "1", "3"]):
        p = tmp_path / f"r{i}.json"
        assert main([*args, "--workers", workers, "--out", str(p)]) == EXIT_OK
        paths.append(p)
    blobs = [p.read_bytes() for p in paths]
    assert blobs[0] == blobs[1] == blobs[2]


def test_gen_workload_then_ingest(tmp_path, capsys):
    trace = tmp_path / "t.kvtr"
    code, _ = run(["gen-workload", "--generator", "shifting_turns", "--turns", "2", *SMALL,
                   "--out", str(trace)], capsys)
    assert code == EXIT_OK
    assert trace.read_bytes()[:4] == b"KVTR"
    code, out = run(["ingest", "--trace", str(trace), "--method", "RocketKV_MT", "--budget", "64"], capsys)
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["summary"]["turns"] == 2
    assert "turn2_recall" in doc["summary"]


@pytest.mark.parametrize("args", [
    ["simulate", "--method", "DuoAttention"],
    ["simulate", "--method", "Bogus"],
    ["simulate", "--split-factor", "abc"],
    ["simulate", "--split-factor", "1.5"],
    ["simulate", "--budget", "1"],
    ["simulate", "--seq-len", "0"],
    ["simulate", "--budget", "64,128"],
    ["simulate", "--kernel", "4"],
    ["cost-table", "--ratios", "0.5"],
    ["gen-workload"],
    ["ingest"],
])
def test_invalid_config_exit_code(args, capsys):
    assert main(args) == EXIT_CONFIG


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"colour": "blue"}')
    assert main(["cost-table", "--config", str(cfg)]) == EXIT_CONFIG


def test_bad_flag_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--pool", "median"])
    assert exc.value.code == 2


def test_io_errors(tmp_path):
    assert main(["ingest", "--trace", str(tmp_path / "missing.kvtr")]) == EXIT_IO
    bad = tmp_path / "bad.kvtr"
    bad.write_bytes(b"NOPE" + bytes(32))
    assert main(["ingest", "--trace", str(bad)]) == EXIT_IO
    assert main(["cost-table", "--config", str(tmp_path / "nope.json")]) == EXIT_IO
    assert main(["cost-table", "--out", str(tmp_path / "no" / "dir" / "x.csv")]) == EXIT_IO


def test_numerical_failure_exit_code(tmp_path):
    from kvcompress import WorkloadSpec, generate_workload
    ses = generate_workload(WorkloadSpec(seq_len=64, decode_steps=2, head_dim=8))
    ses.turns[0].queries[1, 0, 0, 0] = float("nan")
    path = tmp_path / "nan.kvtr"
    path.write_bytes(encode_trace(ses))
    assert main(["ingest", "--trace", str(path), "--method", "FullKV"]) == EXIT_NUMERIC


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "kvcompress", "cost-table", "--ratios", "2", "--format", "csv"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("method,compression_ratio,storage,traffic")
