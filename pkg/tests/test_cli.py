import json
import os
import subprocess
import sys

import numpy as np
import pytest

from qrng_twin import BitStream, read_stream, write_stream
from qrng_twin.cli import main
from qrng_twin.extractor import matrix_from_seed, read_matrix, write_matrix

from conftest import DATA
from test_extractor import golden_input


def test_generate_size_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--bits", "1000000", "--out", str(a)]) == 0
    assert main(["generate", "--bits", "1000000", "--out", str(b)]) == 0
    raw = (a / "raw.qrbs").read_bytes()
    assert len(raw) == 16 + 125_000
    assert raw == (b / "raw.qrbs").read_bytes()
    meta = json.loads((a / "raw.json").read_text())
    assert meta["calibrated"]["filter_beta"] > 0
    assert (a / "config.cfg").exists()
    assert main(["generate", "--bits", "1000000", "--seed", "5", "--out", str(b)]) == 0
    assert (b / "raw.qrbs").read_bytes() != raw


def test_generate_raw_export(tmp_path):
    assert main(["generate", "--bits", "4096", "--raw-export", "--out", str(tmp_path),
                 "--config", os.devnull]) == 0
    assert (tmp_path / "raw.bin").read_bytes() == (tmp_path / "raw.qrbs").read_bytes()[16:]


def test_invalid_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("modes_m = 0\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("colour = blue\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["generate", "--rows", "1024", "--out", str(tmp_path)]) == 2


def test_analyze_all_zeros(tmp_path):
    path = tmp_path / "zeros.qrbs"
    write_stream(BitStream.from_bits(np.zeros(10**5)), path)
    out = tmp_path / "an"
    assert main(["analyze", str(path), "--out", str(out)]) == 1
    rep = json.loads((out / "analysis.json").read_text())
    assert rep["p0"] == 1.0
    assert all(p["h_min"] == 0.0 for p in rep["min_entropy"])
    assert any(e["stage"] == "autocorrelation" for e in rep["errors"])


def test_analyze_ok(tmp_path):
    main(["generate", "--bits", "2000000", "--out", str(tmp_path)])
    out = tmp_path / "an"
    assert main(["analyze", str(tmp_path / "raw.qrbs"), "--out", str(out),
                 "--workers", "2"]) == 0
    for name in ("analysis.json", "block_histogram.csv", "autocorrelation.csv",
                 "max_cond_prob.csv", "hmin.csv", "config.cfg"):
        assert (out / name).exists()


def test_analyze_missing_input(tmp_path):
    assert main(["analyze", str(tmp_path / "nope.qrbs"), "--out", str(tmp_path)]) == 2


def test_extract_one_block(tmp_path):
    path = tmp_path / "in.qrbs"
    write_stream(BitStream.from_bits(np.ones(512 + 100)), path)
    assert main(["extract", str(path), "--out", str(tmp_path / "x")]) == 0
    assert read_stream(tmp_path / "x" / "extracted.qrbs").bit_count == 256
    meta = json.loads((tmp_path / "x" / "extract.json").read_text())
    assert meta["discarded_bits"] == 100 and meta["output_bits"] == 256
    assert read_matrix(tmp_path / "x" / "matrix.qrxmat") == matrix_from_seed(2)


def test_extract_golden(tmp_path):
    path = tmp_path / "golden_in.qrbs"
    write_stream(golden_input(), path)
    assert main(["extract", str(path), "--seed", "2", "--workers", "3",
                 "--out", str(tmp_path / "x")]) == 0
    with open(os.path.join(DATA, "golden_extract_seed2.qrbs"), "rb") as fh:
        assert (tmp_path / "x" / "extracted.qrbs").read_bytes() == fh.read()


def test_extract_errors(tmp_path):
    path = tmp_path / "short.qrbs"
    write_stream(BitStream.from_bits(np.ones(100)), path)
    assert main(["extract", str(path), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.qrxmat"
    bad.write_bytes(b"QRXMAT01" + b"\0" * 4)
    assert main(["extract", str(path), "--matrix", str(bad), "--out", str(tmp_path)]) == 2


def test_extract_with_matrix_file(tmp_path):
    m = matrix_from_seed(77, 8, 16)
    write_matrix(m, tmp_path / "m.qrxmat")
    write_stream(BitStream.from_bits(np.ones(64)), tmp_path / "in.qrbs")
    assert main(["extract", str(tmp_path / "in.qrbs"), "--matrix", str(tmp_path / "m.qrxmat"),
                 "--out", str(tmp_path / "x")]) == 0
    assert read_stream(tmp_path / "x" / "extracted.qrbs").bit_count == 32


def test_bench_zero_duration(capsys):
    assert main(["bench", "--duration", "0"]) == 2
    assert "duration must be positive" in capsys.readouterr().err


def test_bench_short(tmp_path):
    assert main(["bench", "--duration", "0.05", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "bench.json").read_text())
    assert [r["workers"] for r in rep["results"]] == [1, 2, 4, 8]
    assert rep["worker_invariant"] is True


def test_selftest_passes():
    assert main(["selftest"]) == 0


def test_selftest_corrupted_matrix(tmp_path, capsys):
    m = tmp_path / "golden.qrxmat"
    write_matrix(matrix_from_seed(2), m)
    data = bytearray(m.read_bytes())
    data[100] ^= 0x10
    m.write_bytes(bytes(data))
    assert main(["selftest", "--matrix", str(m)]) == 1
    assert "FAIL golden_matrix" in capsys.readouterr().out


def test_selftest_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["selftest", "--out", str(blocker / "sub")]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qrng_twin", "bench", "--duration", "-1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "qrng_twin", "frobnicate"],
                          capture_output=True, text=True)
    assert proc.returncode == 2


@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="worker scaling needs >= 4 cores")
def test_bench_scaling():
    from qrng_twin.cli import bench

    rep = bench(matrix_from_seed(2), 1.0, workers=(1, 4))
    one, four = (r["output_bps"] for r in rep["results"])
    assert four >= 2 * one
