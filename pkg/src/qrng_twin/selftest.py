"""Built-in property suite behind ``qrng-twin selftest``."""
from __future__ import annotations

import hashlib
import math
import os
import tempfile
from importlib import resources

import numpy as np

from . import battery, entropy, source
from .bitstream import BitStream, read_stream, write_stream
from .extractor import (extract_block, extract_stream, matrix_from_seed,
                        read_matrix, write_matrix)

GOLDEN_MATRIX = "data/golden_256x512_seed2.qrxmat"
GOLDEN_MATRIX_SHA256 = "42226b8776ffc7257c1c730d878c180c1d347b83c2e34dbf2118607580d118a3"
# splitmix64 from seed 0, first output (reference vector)
SPLITMIX_SEED0 = 0xE220A8397B1DCDAF


class CheckFailed(AssertionError):
    pass


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise CheckFailed(message)


def check_pmf_normalization(workdir):
    for n_bar, m in ((1.0, 1), (1000.0, 1), (1000.0, 10), (1000.0, 40)):
        mean, var = source.moments(n_bar, m)
        n = np.arange(0, int(mean + 20 * math.sqrt(var)) + 1)
        total = math.fsum(source.pmf_multimode(n_bar, n, m))
        _check(abs(total - 1) < 1e-9, f"sum of pmf({n_bar}, {m}) = {total!r}")


def check_moments(workdir):
    n = np.arange(0, 200_000)
    p = source.pmf_multimode(1000.0, n, 40)
    mean, var = source.moments(1000.0, 40)
    emp_mean = math.fsum(n * p)
    emp_var = math.fsum((n - emp_mean) ** 2 * p)
    _check(abs(emp_mean - mean) < 1e-6 * mean, f"numeric mean {emp_mean}")
    _check(abs(emp_var - var) < 1e-6 * var, f"numeric variance {emp_var}")


def check_single_mode_reduction(workdir):
    n = np.arange(0, 20_000)
    a = source.pmf_multimode(1000.0, n, 1)
    b = source.pmf_single_mode(1000.0, n)
    _check(np.allclose(a, b, rtol=1e-12, atol=0), "m=1 multimode differs from single mode")


def check_gf2_oracle(workdir):
    rng = np.random.default_rng(7)
    for _ in range(500):
        cols = int(rng.integers(1, 33))
        rows = int(rng.integers(1, min(cols, 16) + 1))
        dense = rng.integers(0, 2, (rows, cols), dtype=np.uint8)
        m = _from_dense(dense)
        x = rng.integers(0, 2, cols, dtype=np.uint8)
        want = [sum(int(dense[r, c]) & int(x[c]) for c in range(cols)) % 2
                for r in range(rows)]
        for method in ("table", "popcount"):
            got = extract_block(m, x, method=method)
            _check(got.tolist() == want, f"{method} kernel mismatch at {rows}x{cols}")


def _from_dense(dense):
    from .extractor import ExtractionMatrix

    return ExtractionMatrix(dense.shape[0], dense.shape[1],
                            np.packbits(dense, axis=1, bitorder="little"))


def check_splitmix(workdir):
    from .extractor import splitmix64

    _check(int(splitmix64(0, 1)[0]) == SPLITMIX_SEED0, "splitmix64 reference vector")


def check_golden_matrix(workdir, matrix_path=None):
    if matrix_path is None:
        ref = resources.files("qrng_twin").joinpath(GOLDEN_MATRIX)
        data = ref.read_bytes()
        _check(hashlib.sha256(data).hexdigest() == GOLDEN_MATRIX_SHA256,
               "packaged golden matrix digest changed")
        with resources.as_file(ref) as path:
            m = read_matrix(path)
    else:
        try:
            m = read_matrix(matrix_path)
        except ValueError as exc:
            raise CheckFailed(f"matrix file unreadable: {exc}") from exc
    _check(m == matrix_from_seed(m.seed, m.rows, m.cols),
           "matrix file does not match its seed expansion")


def check_bitstream_roundtrip(workdir):
    rng = np.random.default_rng(11)
    path = os.path.join(workdir, "roundtrip.qrbs")
    for n in (0, 1, 7, 8, 12, 1000, 65_537):
        bits = BitStream.from_bits(rng.integers(0, 2, n))
        write_stream(bits, path)
        _check(read_stream(path) == bits, f"roundtrip failed for {n} bits")
    mpath = os.path.join(workdir, "roundtrip.qrxmat")
    m = matrix_from_seed(3, 5, 13)
    write_matrix(m, mpath)
    _check(read_matrix(mpath) == m, "matrix file roundtrip failed")


def check_pipeline_battery(workdir):
    params = source.SourceParams.calibrated()
    raw = source.simulate_bits(params, 1 << 21)
    p0 = 1 - raw.count_ones() / raw.bit_count
    _check(0.48 < p0 < 0.505, f"raw P0 = {p0}")
    r1 = entropy.autocorrelation(raw, 1).coefficients[0]
    _check(0.1 < r1 < 0.16, f"raw R(1) = {r1}")
    m = matrix_from_seed(2)
    out = extract_stream(m, raw)
    _check(extract_stream(m, raw, workers=3) == out, "extractor output depends on workers")
    for outcome in battery.run_battery(out):
        _check(outcome.passed, f"{outcome.test_name} p = {outcome.p_value:.3g}")


CHECKS = [
    ("pmf_normalization", check_pmf_normalization),
    ("moments", check_moments),
    ("single_mode_reduction", check_single_mode_reduction),
    ("splitmix64", check_splitmix),
    ("gf2_oracle", check_gf2_oracle),
    ("golden_matrix", check_golden_matrix),
    ("bitstream_roundtrip", check_bitstream_roundtrip),
    ("pipeline_battery", check_pipeline_battery),
]


def run_selftest(out_dir: str | None = None, matrix_path: str | None = None,
                 echo=print) -> int:
    """Run every check; 0 if all pass, 1 on any failure, 2 on setup error."""
    try:
        if out_dir is None:
            tmp = tempfile.TemporaryDirectory(prefix="qrng-selftest-")
            workdir = tmp.name
        else:
            tmp = None
            workdir = os.path.join(out_dir, "selftest")
            os.makedirs(workdir, exist_ok=True)
        probe = os.path.join(workdir, ".probe")
        with open(probe, "wb"):
            pass
        os.remove(probe)
    except OSError as exc:
        echo(f"setup error: cannot use work directory: {exc}")
        return 2
    failed = []
    try:
        for name, check in CHECKS:
            try:
                if name == "golden_matrix":
                    check(workdir, matrix_path)
                else:
                    check(workdir)
            except (CheckFailed, ValueError) as exc:
                failed.append(name)
                echo(f"FAIL {name}: {exc}")
            else:
                echo(f"PASS {name}")
    finally:
        if tmp is not None:
            tmp.cleanup()
    if failed:
        echo(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return 1
    echo(f"all {len(CHECKS)} checks passed")
    return 0
