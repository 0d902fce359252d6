import hashlib
import io
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrng_twin import BitStream, read_stream
from qrng_twin.extractor import (ExtractionMatrix, MatrixConfigError, StreamingExtractor,
                                 extract_block, extract_stream, matrix_from_seed,
                                 max_extractable, read_matrix, splitmix64, write_matrix)

from conftest import DATA, iid_stream

MASK = (1 << 64) - 1
GOLDEN_INPUT_SEED = 0x600D
GOLDEN_OUTPUT_SHA256 = "b8748b9c5a43b7bd4416f128ece64f7807f7257ea504881a9e86c9c91cc31b81"


def splitmix_reference(seed, count):
    out, state = [], seed
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def from_dense(dense):
    dense = np.asarray(dense, dtype=np.uint8)
    return ExtractionMatrix(dense.shape[0], dense.shape[1],
                            np.packbits(dense, axis=1, bitorder="little"))


def oracle(dense, x):
    return [sum(int(a) & int(b) for a, b in zip(row, x)) % 2 for row in dense]


def test_splitmix_reference_vector():
    assert int(splitmix64(0, 1)[0]) == 0xE220A8397B1DCDAF
    for seed in (0, 1, 2, MASK):
        assert [int(v) for v in splitmix64(seed, 50)] == splitmix_reference(seed, 50)


def test_matrix_from_seed_layout():
    m = matrix_from_seed(5, 3, 70)
    words = splitmix_reference(5, 6)
    dense = m.dense()
    for r in range(3):
        want = [(words[2 * r + c // 64] >> (c % 64)) & 1 for c in range(70)]
        assert dense[r].tolist() == want


def test_matrix_from_seed_deterministic():
    assert matrix_from_seed(2) == matrix_from_seed(2)
    assert matrix_from_seed(2) != matrix_from_seed(3)
    density = matrix_from_seed(2).dense().mean()
    assert 0.48 <= density <= 0.52


@pytest.mark.parametrize("rows,cols", [(0, 4), (5, 4), (1, 0), (1, 1 << 16)])
def test_bad_dimensions(rows, cols):
    with pytest.raises(MatrixConfigError):
        matrix_from_seed(1, rows, cols)


def test_zero_matrix_gives_zero_output():
    m = from_dense(np.zeros((4, 8), dtype=np.uint8))
    out = extract_stream(m, iid_stream(8000))
    assert out.bit_count == 4000 and out.count_ones() == 0


def test_selector_matrix_copies_input():
    dense = np.zeros((8, 16), dtype=np.uint8)
    dense[np.arange(8), np.arange(8)] = 1
    m = from_dense(dense)
    x = iid_stream(16 * 100)
    out = extract_stream(m, x).to_bits().reshape(100, 8)
    np.testing.assert_array_equal(out, x.to_bits().reshape(100, 16)[:, :8])


def test_small_worked_example():
    m = from_dense([[1, 0, 1, 1], [0, 1, 1, 0]])
    assert extract_block(m, [1, 1, 1, 0]).tolist() == [0, 0]
    assert extract_block(m, [1, 0, 0, 0]).tolist() == [1, 0]
    assert extract_block(m, [0, 1, 1, 1]).tolist() == [0, 0]
    assert extract_block(m, [0, 0, 1, 1]).tolist() == [0, 1]


def test_block_kind_follows_input():
    m = matrix_from_seed(1, 8, 16)
    x = iid_stream(16)
    y = extract_block(m, x)
    assert isinstance(y, BitStream)
    assert y.to_bits().tolist() == extract_block(m, x.to_bits()).tolist()
    with pytest.raises(ValueError):
        extract_block(m, np.zeros(15, dtype=np.uint8))


@pytest.mark.parametrize("method", ["table", "popcount"])
def test_brute_force_oracle(method):
    rng = np.random.default_rng(2024)
    for _ in range(2000):
        cols = int(rng.integers(1, 33))
        rows = int(rng.integers(1, min(16, cols) + 1))
        dense = rng.integers(0, 2, (rows, cols), dtype=np.uint8)
        x = rng.integers(0, 2, cols, dtype=np.uint8)
        got = extract_block(from_dense(dense), x, method=method)
        assert got.tolist() == oracle(dense, x)


def test_kernels_agree_on_streams():
    for rows, cols in [(256, 512), (200, 300), (64, 64), (1, 9), (513, 1030)]:
        m = matrix_from_seed(rows * 7 + cols, rows, cols)
        x = iid_stream(cols * 37 + 5, seed=rows)
        a = extract_stream(m, x, method="table")
        b = extract_stream(m, x, method="popcount")
        assert a == b and a.bit_count == 37 * rows


def test_matches_integer_matmul():
    m = matrix_from_seed(2)
    x = iid_stream(512 * 300, seed=3)
    want = (x.to_bits().reshape(300, 512).astype(np.int64) @ m.dense().T.astype(np.int64)) % 2
    assert extract_stream(m, x).to_bits().tolist() == want.ravel().tolist()


@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=64, max_size=64), st.binary(min_size=64, max_size=64))
def test_linearity(a, b):
    m = matrix_from_seed(2)
    xa = BitStream(np.frombuffer(a, np.uint8), 512)
    xb = BitStream(np.frombuffer(b, np.uint8), 512)
    xab = BitStream(np.bitwise_xor(xa.payload, xb.payload), 512)
    ya, yb = extract_block(m, xa), extract_block(m, xb)
    assert extract_block(m, xab) == BitStream(np.bitwise_xor(ya.payload, yb.payload), 256)


def test_partial_block_discarded():
    m = matrix_from_seed(2)
    x = iid_stream(512 * 10 + 300)
    assert extract_stream(m, x) == extract_stream(m, x[: 5120])
    with pytest.raises(ValueError):
        extract_stream(m, x[:511])
    with pytest.raises(ValueError):
        extract_stream(m, BitStream.empty())


def test_worker_and_chunk_invariance():
    m = matrix_from_seed(2)
    x = iid_stream(512 * 1001 + 17)
    ref = extract_stream(m, x)
    for w in (2, 3, 8):
        assert extract_stream(m, x, workers=w) == ref
    se = StreamingExtractor(m, workers=2)
    parts, pos = [], 0
    for n in (1, 511, 700, 100_000, 30, 10**6):
        parts.append(se.feed(x[pos: min(pos + n, x.bit_count)]))
        pos = min(pos + n, x.bit_count)
    assert BitStream.concat(parts) == ref
    assert se.discarded_bits == 17


def test_matrix_file_roundtrip(tmp_path):
    for rows, cols in [(256, 512), (3, 13), (1, 1)]:
        m = matrix_from_seed(9, rows, cols)
        path = tmp_path / f"m{rows}.qrxmat"
        n = write_matrix(m, path)
        assert os.path.getsize(path) == n == 20 + rows * ((cols + 7) // 8)
        assert read_matrix(path) == m


def test_matrix_file_corruption():
    buf = io.BytesIO()
    write_matrix(matrix_from_seed(9, 3, 13), buf)
    data = buf.getvalue()
    with pytest.raises(MatrixConfigError):
        read_matrix(io.BytesIO(b"XX" + data[2:]))
    with pytest.raises(MatrixConfigError):
        read_matrix(io.BytesIO(data[:-1]))
    with pytest.raises(MatrixConfigError):
        read_matrix(io.BytesIO(data + b"\0"))
    bad = bytearray(data)
    bad[-1] |= 0x80  # pad bit beyond column 13
    with pytest.raises(MatrixConfigError):
        read_matrix(io.BytesIO(bytes(bad)))


def golden_input():
    words = splitmix64(GOLDEN_INPUT_SEED, 15625).astype("<u8")
    return BitStream(words.view(np.uint8), 10**6)


def test_golden_pair(tmp_path):
    from qrng_twin import write_stream

    out = extract_stream(matrix_from_seed(2), golden_input())
    path = tmp_path / "out.qrbs"
    write_stream(out, path)
    data = path.read_bytes()
    assert hashlib.sha256(data).hexdigest() == GOLDEN_OUTPUT_SHA256
    with open(os.path.join(DATA, "golden_extract_seed2.qrbs"), "rb") as fh:
        assert fh.read() == data
    assert read_stream(path).bit_count == 499_968


def test_max_extractable():
    assert max_extractable(0.4114, 512) == 391
    assert max_extractable(0.5, 512) == 512
    assert max_extractable(0.0, 512) == 0
    with pytest.warns(RuntimeWarning):
        max_extractable(0.1, 512, rows=256)
    with pytest.raises(ValueError):
        max_extractable(0.6, 512)
