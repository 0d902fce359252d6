import io
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrng_twin.bitstream import (HEADER_SIZE, BitStream, BitStreamCorruptError,
                                 BitStreamFormatError, BitStreamReader, BitStreamWriter,
                                 read_raw, read_stream, stream_bytes, write_raw,
                                 write_stream)


def test_bit_order_is_lsb_first():
    bits = BitStream.from_bits([1, 0, 0, 0, 0, 0, 0, 0, 0, 1])
    assert bits.payload.tolist() == [0x01, 0x02]
    assert bits.to_bits().tolist() == [1, 0, 0, 0, 0, 0, 0, 0, 0, 1]


def test_words_layout():
    bits = BitStream.from_bits([0] * 64 + [1])
    w = bits.words()
    assert w.tolist() == [0, 1]


def test_empty_stream_is_16_bytes(tmp_path):
    path = tmp_path / "e.qrbs"
    assert write_stream(BitStream.empty(), path) == 16
    assert os.path.getsize(path) == 16
    assert read_stream(path) == BitStream.empty()


def test_12_bit_stream_layout(tmp_path):
    bits = BitStream.from_bits([1] * 12)
    path = tmp_path / "t.qrbs"
    assert write_stream(bits, path) == 18
    raw = path.read_bytes()
    assert raw[:8] == b"QRBS0001"
    assert int.from_bytes(raw[8:16], "little") == 12
    assert raw[16:] == bytes([0xFF, 0x0F])  # four zero pad bits


def test_wrong_magic(tmp_path):
    path = tmp_path / "bad.qrbs"
    path.write_bytes(b"NOTABSTR" + bytes(8))
    with pytest.raises(BitStreamFormatError, match="magic"):
        read_stream(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "trunc.qrbs"
    write_stream(BitStream.from_bits([1] * 100), path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(BitStreamCorruptError):
        read_stream(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "trunc.qrbs"
    path.write_bytes(b"QRBS0001\x01")
    with pytest.raises(BitStreamCorruptError):
        read_stream(path)


def test_nonzero_pad_bits(tmp_path):
    path = tmp_path / "pad.qrbs"
    write_stream(BitStream.from_bits([1] * 12), path)
    data = bytearray(path.read_bytes())
    data[-1] |= 0x80
    path.write_bytes(bytes(data))
    with pytest.raises(BitStreamCorruptError, match="pad"):
        read_stream(path)


def test_constructor_rejects_dirty_padding():
    with pytest.raises(ValueError):
        BitStream(bytes([0xFF]), 4)
    with pytest.raises(ValueError):
        BitStream(bytes(3), 8)


def test_roundtrip_1e6_random_bits():
    rng = np.random.default_rng(0)
    bits = BitStream.from_bits(rng.integers(0, 2, 10**6))
    buf = io.BytesIO(stream_bytes(bits))
    assert read_stream(buf) == bits


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 1), max_size=300))
def test_roundtrip_property(values):
    bits = BitStream.from_bits(values)
    assert read_stream(io.BytesIO(stream_bytes(bits))) == bits
    assert bits.to_bits().tolist() == values


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), max_size=200),
       st.lists(st.integers(0, 200), max_size=6))
def test_chunked_writer_matches_single_shot(values, cuts):
    bits = BitStream.from_bits(values)
    edges = sorted({0, len(values), *[c for c in cuts if c <= len(values)]})
    buf = io.BytesIO()
    with BitStreamWriter(buf) as w:
        for a, b in zip(edges, edges[1:]):
            w.write(bits[a:b])
    assert buf.getvalue() == stream_bytes(bits)


def test_writer_with_declared_length_checks_total():
    buf = io.BytesIO()
    w = BitStreamWriter(buf, total_bits=10)
    w.write(BitStream.from_bits([1] * 9))
    with pytest.raises(ValueError, match="declared"):
        w.close()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=300), st.integers(1, 64))
def test_chunked_reader(values, chunk):
    bits = BitStream.from_bits(values)
    reader = BitStreamReader(io.BytesIO(stream_bytes(bits)))
    assert reader.bit_count == len(values)
    assert BitStream.concat(list(reader.chunks(chunk))) == bits


def test_reader_detects_truncation():
    data = stream_bytes(BitStream.from_bits([1] * 100))[:-2]
    with pytest.raises(BitStreamCorruptError):
        list(BitStreamReader(io.BytesIO(data)).chunks(16))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), max_size=200), st.integers(0, 200), st.integers(0, 200))
def test_slicing_matches_unpacked(values, a, b):
    bits = BitStream.from_bits(values)
    assert bits[a:b].to_bits().tolist() == values[a:b]


def test_complement_keeps_padding_clean():
    bits = BitStream.from_bits([1, 0, 1])
    comp = bits.complement()
    assert comp.to_bits().tolist() == [0, 1, 0]
    assert comp.payload.tolist() == [0b010]


def test_raw_export(tmp_path):
    bits = BitStream.from_bits([1, 1, 0, 0, 0, 0, 0, 0, 1, 0, 1])
    path = tmp_path / "x.bin"
    assert write_raw(bits, path) == 1  # trailing partial byte dropped
    back = read_raw(path)
    assert back.bit_count == 8
    assert back.to_bits().tolist() == [1, 1, 0, 0, 0, 0, 0, 0]
    assert HEADER_SIZE == 16
