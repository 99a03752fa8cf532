import csv
import io
import json

import numpy as np
import pytest

from cqsketch import CoinSource, ConcurrentSketch, SequentialSketch, SketchConfig, bench
from cqsketch.bench import WorkloadSpec, rank_error
from cqsketch.cli import main
from cqsketch.config import ConfigError
from cqsketch.sketch import InvariantViolation


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_analyze_relaxation(capsys):
    assert main(["analyze", "relaxation", "--k", "4096", "--numa-nodes", "1",
                 "--threads", "8", "--b", "2048"]) == 0
    assert capsys.readouterr().out.strip() == "r=30720"


def test_analyze_epsilon_and_holes_json(capsys):
    assert main(["analyze", "epsilon", "--k", "4096", "--threads", "8", "--b", "2048",
                 "--rho", "0.05", "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["r"] == 30720 and out["epsilon"] == pytest.approx(0.06304, abs=1e-5)
    assert main(["analyze", "holes", "--b", "16", "--k", "4096"]) == 0
    text = capsys.readouterr().out
    assert "total_bound=0.933" in text


def test_unknown_flag_prints_usage(capsys):
    assert main(["throughput", "--nope"]) == 1
    assert "usage:" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["frobnicate"]) == 1


def test_invalid_config_exits_1(capsys):
    assert main(["throughput", "--k", "4", "--b", "3", "--runs", "1", "--n", "10"]) == 1
    assert "invalid configuration" in capsys.readouterr().err
    assert main(["throughput", "--mode", "query-only", "--query-threads", "1"]) == 1
    assert main(["analyze", "relaxation", "--numa-nodes", "4", "--threads", "2"]) == 1


def test_invariant_violation_exits_2(monkeypatch, capsys):
    def broken(spec):
        raise InvariantViolation("audit failed")

    monkeypatch.setattr(bench, "run_throughput", broken)
    assert main(["throughput", "--runs", "1"]) == 2
    assert "invariant violation" in capsys.readouterr().err


def test_throughput_smoke(capsys):
    assert main(["throughput", "--mode", "update-only", "--threads", "1", "--n", "100000",
                 "--k", "4096", "--b", "16", "--runs", "2"]) == 0
    rows = rows_of(capsys.readouterr().out)
    assert [r["run"] for r in rows] == ["0", "1", "mean"]
    assert list(rows[0]) == list(bench.THROUGHPUT_COLUMNS)
    for r in rows:
        assert float(r["update_tput"]) > 0 and r["audit_ok"] == "True"
        assert int(r["stream_size"]) == 100000 // 8192 * 8192


def test_mixed_and_query_only(capsys):
    assert main(["throughput", "--mode", "mixed", "--threads", "2", "--query-threads", "2",
                 "--k", "256", "--prefill", "20000", "--n", "50000", "--runs", "1",
                 "--rho", "0.05"]) == 0
    mean = rows_of(capsys.readouterr().out)[-1]
    assert int(mean["queries"]) > 0 and 0 < float(mean["miss_rate"]) <= 1
    assert main(["throughput", "--mode", "query-only", "--query-threads", "2", "--k", "256",
                 "--prefill", "20000", "--runs", "1", "--duration", "0.2"]) == 0
    mean = rows_of(capsys.readouterr().out)[-1]
    assert int(mean["updates"]) == 0 and float(mean["query_tput"]) > 0


def test_holes_csv_to_env_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(bench.OUT_ENV, str(tmp_path))
    assert main(["holes", "--b", "16", "2048", "--k", "1024", "--trials", "20000",
                 "--n", "50000", "--threads", "2"]) == 0
    assert capsys.readouterr().out == ""
    rows = rows_of((tmp_path / "holes.csv").read_text())
    assert [int(r["b"]) for r in rows] == [16, 2048]
    for r in rows:
        assert float(r["sim_mean"]) <= 2.8 and float(r["bound"]) <= 2.8
        assert int(r["e2e_batches"]) == 50000 // 2048
    assert float(rows[1]["bound"]) <= 1.4  # one region


def test_accuracy_is_reproducible_single_threaded(tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        assert main(["accuracy", "--k", "64", "--b", "4", "--n", "20000", "--seed", "3",
                     "--format", "json", "--out", str(path)]) == 0
        outs.append(path.read_text())
    assert outs[0] == outs[1]
    rows = json.loads(outs[0])
    assert len(rows) == 99 and list(rows[0]) == list(bench.ACCURACY_COLUMNS)


def test_accuracy_degrades_with_small_k():
    def worst(k):
        rows = bench.run_accuracy(WorkloadSpec(n=200_000, k=k, b=16, dist="normal", seed=1),
                                  baseline=False)
        return max(abs(r["rank_error"]) for r in rows)

    assert worst(32) > worst(256)


def test_one_thread_matches_sequential_with_same_coins():
    k = 32
    coins = (np.random.default_rng(0).random(5000) < 0.5).tolist()
    xs = bench.make_stream(2 * k * 50, "normal", 0)
    seq = SequentialSketch(k, CoinSource.injected(coins))
    seq.extend(xs.tolist())
    cs = ConcurrentSketch(SketchConfig(k=k, b=1, coins=coins))
    cs.register_updater().extend(xs)
    snap = cs.collect_snapshot()
    assert [snap.query(p) for p in bench.PHI_GRID] == [seq.query(p) for p in bench.PHI_GRID]


def test_stderr_rows():
    rows = bench.run_stderr(WorkloadSpec(update_threads=2, n=3000, k=16, b=4, seed=2),
                            runs=3, baseline=True)
    assert len(rows) == 99 and all(r["stderr"] >= 0 and r["seq_stderr"] >= 0 for r in rows)
    with pytest.raises(ConfigError):
        bench.run_stderr(WorkloadSpec(n=100, k=16, b=4), runs=1)


def test_stream_still_buffered_is_reported(capsys):
    # n < 2k never reaches the levels, so there is nothing to query yet
    assert main(["accuracy", "--k", "64", "--b", "1", "--n", "100"]) == 1
    assert "empty" in capsys.readouterr().err


def test_rank_error():
    s = np.arange(10.0)
    assert rank_error(s, 5.0, 0.5) == 0.0
    assert rank_error(s, 7.0, 0.5) == pytest.approx(0.2)
    assert rank_error(s, 2.0, 0.5) == pytest.approx(-0.3)
    assert rank_error(np.array([1.0, 1.0, 1.0, 2.0]), 1.0, 0.5) == 0.0


def test_workload_validation():
    with pytest.raises(ConfigError):
        WorkloadSpec(mode="query-only", query_threads=1, prefill=0)
    with pytest.raises(ConfigError):
        WorkloadSpec(mode="sideways")
    with pytest.raises(ConfigError):
        WorkloadSpec(k=4, b=3)
