import pytest

from mecha import bench
from mecha.bench import (
    BenchmarkRecord,
    CorrectnessError,
    emit_csv,
    linear_r2,
    predict_duration,
    read_csv,
    run_benchmark,
    run_sweep,
    speedup_pct,
)
from mecha.cli import bench_main
from mecha.device import ZERO_LATENCY, Device, LatencyModel
from mecha.protocol import OpCode
from oracles import aes_ecb, sha256


def test_oracle_agrees_with_reference():
    data = bytes(range(256)) * 4
    assert bench.oracle_response(OpCode.LOOPBACK, data) == data
    assert bench.oracle_response(OpCode.HASH, data) == sha256(data)
    assert bench.oracle_response(OpCode.ENCRYPT, data) == aes_ecb(bytes(range(16)), data)


def test_workload_is_deterministic_and_mixed():
    assert bench.workload(4, 64) == bench.workload(4, 64)
    assert bench.workload(4, 64) != bench.workload(5, 64)
    assert [bench.workload(i, 0)[0] for i in range(4)] == [OpCode.LOOPBACK, OpCode.HASH, OpCode.ENCRYPT,
                                                          OpCode.LOOPBACK]


def test_record_arithmetic():
    r = run_benchmark("mecha", 5, 65536, 1024, ZERO_LATENCY)
    assert r.requests == 320
    assert r.aggregate_bytes == 327680
    assert r.duration_s > 0 and r.speedup_pct is None


@pytest.mark.parametrize("mode", ["mecha", "baseline"])
def test_context_counts(mode):
    d = Device(ZERO_LATENCY)
    run_benchmark(mode, 3, 4096, 512, ZERO_LATENCY, device=d)
    assert d.count("send") == 24
    assert d.count("ctx_open") == (1 if mode == "mecha" else 24)


def test_baseline_matches_analytic_model():
    lat = LatencyModel()
    predicted = predict_duration("baseline", 4, 16384, 1024, lat)
    measured = run_benchmark("baseline", 4, 16384, 1024, lat).duration_s
    assert abs(measured - predicted) / predicted <= 0.20


def test_mecha_is_device_bound():
    lat = LatencyModel()
    predicted = predict_duration("mecha", 6, 32768, 1024, lat)
    measured = run_benchmark("mecha", 6, 32768, 1024, lat).duration_s
    assert predicted * 0.8 <= measured <= predicted * 2


def test_wrong_answer_voids_timing(monkeypatch):
    monkeypatch.setattr(bench, "oracle_response", lambda op, p: b"nope")
    with pytest.raises(CorrectnessError):
        run_benchmark("mecha", 2, 2048, 1024, ZERO_LATENCY)
    with pytest.raises(CorrectnessError):
        run_benchmark("baseline", 2, 2048, 1024, ZERO_LATENCY)


@pytest.mark.parametrize("kw", [dict(mode="mecha", instances=0), dict(mode="bogus", instances=1),
                                dict(mode="baseline", instances=3, pdu_payload_len=100),
                                dict(mode="baseline", instances=1, processes=True)])
def test_bad_arguments(kw):
    with pytest.raises(ValueError):
        run_benchmark(total_bytes=1024, latency_model=ZERO_LATENCY, **kw)


def test_sweep_shape():
    pairs = run_sweep([1, 2, 3], 2048, 512, ZERO_LATENCY)
    assert len(pairs) == 3
    for (m, b), n in zip(pairs, [1, 2, 3]):
        assert (m.mode, b.mode, m.instances, b.instances) == ("mecha", "baseline", n, n)
        assert m.speedup_pct == b.speedup_pct == speedup_pct(b.duration_s, m.duration_s)
    with pytest.raises(ValueError):
        run_sweep([3, 1], 2048, 512, ZERO_LATENCY)
    with pytest.raises(ValueError):
        run_sweep([], 2048, 512, ZERO_LATENCY)


def test_speedup_formula():
    assert speedup_pct(10.0, 2.0) == 80.0
    assert linear_r2([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)


def test_mecha_in_processes():
    lat = LatencyModel(0, 0, 0, 50)
    d = Device(lat)
    r = run_benchmark("mecha", 3, 8192, 1024, lat, processes=True, device=d)
    assert r.aggregate_bytes == 3 * 8192
    assert d.count("send") == 24 and d.count("ctx_open") == 1


def records():
    return [BenchmarkRecord("mecha", 5, 65536, 1024, 0.123456789, 327680, 91.25),
            BenchmarkRecord("baseline", 5, 65536, 1024, 1.5, 327680, 91.25),
            BenchmarkRecord("mecha", 7, 100, 10, 0.5, 700, None)]


def test_csv_layout(tmp_path):
    path = tmp_path / "r.csv"
    emit_csv(records()[:2], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0] == "mode,instances,total_bytes,pdu_len,duration_s,aggregate_bytes,speedup_pct"
    assert lines[1] == "mecha,5,65536,1024,0.123456789,327680,91.25"


def test_csv_empty(tmp_path):
    path = tmp_path / "r.csv"
    emit_csv([], path)
    assert path.read_text().splitlines() == [",".join(bench.CSV_HEADER)]


def test_csv_round_trip(tmp_path):
    path = tmp_path / "r.csv"
    emit_csv(records(), path)
    assert read_csv(path) == records()
    assert path.read_text().splitlines()[3].endswith(",700,")


def test_csv_unwritable(tmp_path):
    with pytest.raises(OSError):
        emit_csv(records(), tmp_path / "missing" / "r.csv")


def write_conf(tmp_path, text="ctx_open_us = 0\nctx_close_us = 0\nper_byte_ns = 0\nper_op_us = 0\n"):
    conf = tmp_path / "zero.conf"
    conf.write_text(text)
    return str(conf)


def test_cli_sweep_writes_csv(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    rc = bench_main(["--mode", "sweep", "--instances", "2,1", "--total-bytes", "2048", "--pdu-len", "512",
                     "--config", write_conf(tmp_path), "--csv", str(out)])
    assert rc == 0
    recs = read_csv(out)
    assert [(r.mode, r.instances) for r in recs] == [("mecha", 1), ("baseline", 1), ("mecha", 2), ("baseline", 2)]
    assert "speedup%" in capsys.readouterr().out


def test_cli_single_mode(tmp_path):
    out = tmp_path / "b.csv"
    assert bench_main(["--mode", "baseline", "--instances", "2", "--total-bytes", "1024", "--pdu-len", "256",
                       "--config", write_conf(tmp_path), "--csv", str(out)]) == 0
    assert [r.speedup_pct for r in read_csv(out)] == [None]


def test_cli_exit_codes(tmp_path, monkeypatch):
    assert bench_main(["--config", write_conf(tmp_path, "bogus = 1\n")]) == 2
    assert bench_main(["--mode", "mecha", "--instances", "3", "--pdu-len", "100",
                       "--config", write_conf(tmp_path)]) == 2
    monkeypatch.setattr(bench, "oracle_response", lambda op, p: b"nope")
    assert bench_main(["--mode", "mecha", "--instances", "1", "--total-bytes", "512",
                       "--config", write_conf(tmp_path)]) == 1
    with pytest.raises(SystemExit):
        bench_main(["--instances", "0"])
