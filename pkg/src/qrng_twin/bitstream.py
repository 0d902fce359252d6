"""Packed bitstreams and the ``QRBS0001`` file format.

Bit order is defined here and nowhere else: stream bit ``i`` lives in byte
``i // 8`` at bit position ``i % 8`` (least-significant bit first). Every other
module reads and writes bits through :class:`BitStream`, so the convention is
fixed in one place.

File layout::

    offset  size  field
    0       8     magic b"QRBS0001"
    8       8     bit_count, unsigned little-endian
    16      ...   payload, ceil(bit_count / 8) bytes; unused trailing bits zero

A headerless *raw* mode (payload only) exists for feeding external test
suites such as Dieharder; its bit count is always ``8 * file_size``.
"""
from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO, Iterable, Iterator, Union

import numpy as np

MAGIC = b"QRBS0001"
HEADER = struct.Struct("<8sQ")
HEADER_SIZE = HEADER.size

PathOrFile = Union[str, os.PathLike, BinaryIO]


class BitStreamFormatError(ValueError):
    """The file is not a QRBS0001 stream."""


class BitStreamCorruptError(BitStreamFormatError):
    """The file has the right magic but inconsistent or damaged contents."""


def _nbytes(bit_count: int) -> int:
    return (bit_count + 7) // 8


def _pad_mask(bit_count: int) -> int:
    """Mask of the unused bits in the final payload byte (0 if none)."""
    used = bit_count % 8
    return 0 if used == 0 else (0xFF << used) & 0xFF


class BitStream:
    """Immutable packed sequence of bits.

    Parameters
    ----------
    payload : bytes-like or uint8 array
        Packed bytes, LSB-first. Length must be ``ceil(bit_count / 8)``.
    bit_count : int, optional
        Number of valid bits; defaults to ``8 * len(payload)``.

    Raises
    ------
    ValueError
        If the payload length is wrong or the pad bits are not zero.
    """

    __slots__ = ("_payload", "_bit_count")

    def __init__(self, payload, bit_count: int | None = None):
        arr = np.frombuffer(bytes(payload), dtype=np.uint8) if not isinstance(
            payload, np.ndarray) else np.ascontiguousarray(payload, dtype=np.uint8).ravel()
        if bit_count is None:
            bit_count = arr.size * 8
        if bit_count < 0:
            raise ValueError("bit_count must be non-negative")
        if arr.size != _nbytes(bit_count):
            raise ValueError(
                f"payload has {arr.size} bytes, {_nbytes(bit_count)} expected "
                f"for {bit_count} bits")
        mask = _pad_mask(bit_count)
        if mask and arr[-1] & mask:
            raise ValueError("pad bits beyond bit_count must be zero")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        self._payload = arr
        self._bit_count = int(bit_count)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_bits(cls, bits) -> "BitStream":
        """Pack an array-like of 0/1 values."""
        bits = np.asarray(bits, dtype=np.uint8).ravel()
        if bits.size and bits.max() > 1:
            raise ValueError("bits must be 0 or 1")
        return cls._trusted(np.packbits(bits, bitorder="little"), bits.size)

    @classmethod
    def empty(cls) -> "BitStream":
        return cls._trusted(np.zeros(0, dtype=np.uint8), 0)

    @classmethod
    def _trusted(cls, payload: np.ndarray, bit_count: int) -> "BitStream":
        # caller guarantees length and zero pad bits; skips the copy
        obj = cls.__new__(cls)
        payload = np.ascontiguousarray(payload, dtype=np.uint8)
        payload.flags.writeable = False
        obj._payload = payload
        obj._bit_count = int(bit_count)
        return obj

    @classmethod
    def concat(cls, streams: Iterable["BitStream"]) -> "BitStream":
        streams = list(streams)
        if all(s.bit_count % 8 == 0 for s in streams[:-1]):
            total = sum(s.bit_count for s in streams)
            if not streams:
                return cls.empty()
            return cls._trusted(np.concatenate([s.payload for s in streams]), total)
        return cls.from_bits(np.concatenate([s.to_bits() for s in streams]))

    # -- views --------------------------------------------------------------

    @property
    def bit_count(self) -> int:
        return self._bit_count

    @property
    def payload(self) -> np.ndarray:
        """Read-only uint8 view of the packed bytes."""
        return self._payload

    def tobytes(self) -> bytes:
        return self._payload.tobytes()

    def to_bits(self) -> np.ndarray:
        """Unpacked uint8 array of 0/1, one element per bit."""
        return np.unpackbits(self._payload, bitorder="little", count=self._bit_count)

    def words(self) -> np.ndarray:
        """Payload as little-endian uint64 words, zero padded to a whole word.

        Bit ``i`` of the stream is bit ``i % 64`` of word ``i // 64``.
        """
        nwords = (self._payload.size + 7) // 8
        buf = np.zeros(nwords * 8, dtype=np.uint8)
        buf[: self._payload.size] = self._payload
        return buf.view("<u8")

    def count_ones(self) -> int:
        return int(np.bitwise_count(self._payload).sum(dtype=np.int64))

    def complement(self) -> "BitStream":
        out = np.bitwise_not(self._payload)
        mask = _pad_mask(self._bit_count)
        if mask:
            out[-1] &= ~mask & 0xFF
        return BitStream._trusted(out, self._bit_count)

    def __len__(self) -> int:
        return self._bit_count

    def __getitem__(self, key) -> "BitStream":
        if not isinstance(key, slice):
            raise TypeError("BitStream supports slicing only; use to_bits() for indexing")
        start, stop, step = key.indices(self._bit_count)
        if step != 1:
            raise ValueError("BitStream slices must be contiguous")
        stop = max(start, stop)
        n = stop - start
        if start % 8 == 0:
            chunk = self._payload[start // 8: start // 8 + _nbytes(n)].copy()
            mask = _pad_mask(n)
            if mask:
                chunk[-1] &= ~mask & 0xFF
            return BitStream._trusted(chunk, n)
        lo, hi = start // 8, _nbytes(stop)
        bits = np.unpackbits(self._payload[lo:hi], bitorder="little")
        off = start - lo * 8
        return BitStream.from_bits(bits[off: off + n])

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitStream):
            return NotImplemented
        return (self._bit_count == other._bit_count
                and np.array_equal(self._payload, other._payload))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"BitStream(bit_count={self._bit_count})"


# -- file I/O ---------------------------------------------------------------

def _open(target: PathOrFile, mode: str):
    if isinstance(target, (str, os.PathLike)):
        return open(target, mode), True
    return target, False


def write_stream(bits: BitStream, destination: PathOrFile) -> int:
    """Write ``bits`` in QRBS0001 format and return the number of bytes written."""
    fh, owned = _open(destination, "wb")
    try:
        fh.write(HEADER.pack(MAGIC, bits.bit_count))
        fh.write(bits.payload.tobytes())
    except OSError as exc:
        raise OSError(f"writing bitstream to {destination!r}: {exc}") from exc
    finally:
        if owned:
            fh.close()
    return HEADER_SIZE + bits.payload.size


def _read_header(fh) -> int:
    head = fh.read(HEADER_SIZE)
    if len(head) < 8 or head[:8] != MAGIC:
        raise BitStreamFormatError("bad magic: not a QRBS0001 bitstream")
    if len(head) < HEADER_SIZE:
        raise BitStreamCorruptError("truncated header")
    _, bit_count = HEADER.unpack(head)
    return bit_count


def read_stream(source: PathOrFile) -> BitStream:
    """Read a QRBS0001 file, validating magic, length and pad bits."""
    fh, owned = _open(source, "rb")
    try:
        bit_count = _read_header(fh)
        expected = _nbytes(bit_count)
        data = fh.read(expected)
        if len(data) < expected:
            raise BitStreamCorruptError(
                f"truncated payload: {len(data)} of {expected} bytes")
        if fh.read(1):
            raise BitStreamCorruptError("trailing bytes after payload")
    finally:
        if owned:
            fh.close()
    payload = np.frombuffer(data, dtype=np.uint8).copy()
    mask = _pad_mask(bit_count)
    if mask and payload[-1] & mask:
        raise BitStreamCorruptError("nonzero pad bits in final byte")
    return BitStream._trusted(payload, bit_count)


def write_raw(bits: BitStream, destination: PathOrFile) -> int:
    """Write the payload only (raw export). A trailing partial byte is dropped."""
    whole = bits.bit_count // 8
    fh, owned = _open(destination, "wb")
    try:
        fh.write(bits.payload[:whole].tobytes())
    finally:
        if owned:
            fh.close()
    return whole


def read_raw(source: PathOrFile) -> BitStream:
    fh, owned = _open(source, "rb")
    try:
        data = fh.read()
    finally:
        if owned:
            fh.close()
    return BitStream._trusted(np.frombuffer(data, dtype=np.uint8).copy(), 8 * len(data))


class BitStreamWriter:
    """Incremental QRBS0001 writer.

    Chunks of any bit length may be appended; the output is byte-identical to
    :func:`write_stream` on the concatenation. The header is patched on
    :meth:`close`, so the destination must be seekable unless ``total_bits``
    is declared up front.
    """

    def __init__(self, destination: PathOrFile, total_bits: int | None = None):
        self._fh, self._owned = _open(destination, "wb")
        self._declared = total_bits
        self._start = self._fh.tell() if total_bits is None else None
        self._fh.write(HEADER.pack(MAGIC, total_bits or 0))
        self._carry = np.zeros(0, dtype=np.uint8)  # unpacked bits, < 8
        self.bit_count = 0
        self.closed = False

    def write(self, bits: BitStream) -> None:
        if self.closed:
            raise ValueError("write to closed BitStreamWriter")
        self.bit_count += bits.bit_count
        if self._carry.size == 0 and bits.bit_count % 8 == 0:
            self._fh.write(bits.payload.tobytes())
            return
        merged = np.concatenate([self._carry, bits.to_bits()])
        whole = merged.size - merged.size % 8
        if whole:
            self._fh.write(np.packbits(merged[:whole], bitorder="little").tobytes())
        self._carry = merged[whole:]

    def close(self) -> int:
        if self.closed:
            return HEADER_SIZE + _nbytes(self.bit_count)
        if self._carry.size:
            self._fh.write(np.packbits(self._carry, bitorder="little").tobytes())
        if self._declared is None:
            end = self._fh.tell()
            self._fh.seek(self._start + 8)
            self._fh.write(struct.pack("<Q", self.bit_count))
            self._fh.seek(end)
        elif self._declared != self.bit_count:
            raise ValueError(
                f"declared {self._declared} bits but wrote {self.bit_count}")
        if self._owned:
            self._fh.close()
        self.closed = True
        return HEADER_SIZE + _nbytes(self.bit_count)

    def __enter__(self) -> "BitStreamWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        elif self._owned:
            self._fh.close()


class BitStreamReader:
    """Sequential chunked reader for QRBS0001 files.

    Chunks are whole bytes except possibly the last one. Pad bits and payload
    length are validated as the end of the file is reached.
    """

    def __init__(self, source: PathOrFile):
        self._fh, self._owned = _open(source, "rb")
        self.bit_count = _read_header(self._fh)
        self._remaining = self.bit_count

    def read(self, max_bits: int) -> BitStream:
        n = min(max(8, max_bits - max_bits % 8), self._remaining)
        if n <= 0:
            return BitStream.empty()
        data = self._fh.read(_nbytes(n))
        if len(data) < _nbytes(n):
            raise BitStreamCorruptError("truncated payload")
        self._remaining -= n
        payload = np.frombuffer(data, dtype=np.uint8).copy()
        if self._remaining == 0:
            mask = _pad_mask(n)
            if mask and payload[-1] & mask:
                raise BitStreamCorruptError("nonzero pad bits in final byte")
            if self._fh.read(1):
                raise BitStreamCorruptError("trailing bytes after payload")
        return BitStream._trusted(payload, n)

    def chunks(self, chunk_bits: int = 1 << 26) -> Iterator[BitStream]:
        while self._remaining:
            yield self.read(chunk_bits)

    def close(self) -> None:
        if self._owned:
            self._fh.close()

    def __enter__(self) -> "BitStreamReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def stream_bytes(bits: BitStream) -> bytes:
    """Serialized QRBS0001 image of ``bits`` (header + payload)."""
    buf = io.BytesIO()
    write_stream(bits, buf)
    return buf.getvalue()
