"""Seeded GF(2) matrix extractor.

Each cycle multiplies a ``cols``-bit raw block by a fixed random
``rows x cols`` binary matrix: output bit ``r`` is the parity of
``row_r AND x``. The default 256 x 512 shape halves the raw rate.

Two kernels compute the same product:

``table``
    For every input byte position, the XOR of the matrix columns selected by
    each of the 256 byte values is precomputed. A block then costs one table
    row lookup and XOR per input byte. This is the fast path.
``popcount``
    Row by row: AND with the input words, fold the words together and take
    the parity. Used when the table would be too large.

Matrix file layout (``QRXMAT01``)::

    offset  size  field
    0       8     magic b"QRXMAT01"
    8       2     rows, unsigned little-endian
    10      2     cols, unsigned little-endian
    12      8     seed, unsigned little-endian (0 for external matrices)
    20      ...   rows * ceil(cols / 8) bytes, row-major, each row padded to a
                  byte boundary, LSB-first within each byte
"""
from __future__ import annotations

import math
import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bitstream import BitStream, PathOrFile, _open

MATRIX_MAGIC = b"QRXMAT01"
_MATRIX_HEADER = struct.Struct("<8sHHQ")
MAX_DIM = 0xFFFF
TABLE_LIMIT_BYTES = 64 << 20
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class MatrixConfigError(ValueError):
    """Invalid matrix dimensions or a damaged matrix file."""


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of SplitMix64 started from ``seed``."""
    with np.errstate(over="ignore"):
        steps = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(seed) + steps * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def _check_dims(rows: int, cols: int) -> None:
    if not 1 <= rows <= cols <= MAX_DIM:
        raise MatrixConfigError(
            f"need 1 <= rows <= cols <= {MAX_DIM} (compression only), "
            f"got rows={rows}, cols={cols}")


@dataclass(frozen=True, eq=False)
class ExtractionMatrix:
    rows: int
    cols: int
    bits: np.ndarray  # (rows, ceil(cols / 8)) uint8, row-major, LSB-first
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        _check_dims(self.rows, self.cols)
        row_bytes = (self.cols + 7) // 8
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.size != self.rows * row_bytes:
            raise MatrixConfigError(
                f"matrix payload has {bits.size} bytes, expected {self.rows * row_bytes}")
        bits = bits.reshape(self.rows, row_bytes)
        if self.cols % 8 and np.any(bits[:, -1] >> (self.cols % 8)):
            raise MatrixConfigError("matrix pad bits beyond cols must be zero")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def row_bytes(self) -> int:
        return (self.cols + 7) // 8

    def dense(self) -> np.ndarray:
        """(rows, cols) array of 0/1."""
        return np.unpackbits(self.bits, axis=1, bitorder="little", count=self.cols)

    def row_words(self) -> np.ndarray:
        """(rows, ceil(cols / 64)) little-endian uint64 words per row."""
        if "row_words" not in self._cache:
            nw = (self.cols + 63) // 64
            buf = np.zeros((self.rows, nw * 8), dtype=np.uint8)
            buf[:, : self.row_bytes] = self.bits
            self._cache["row_words"] = np.ascontiguousarray(buf.view("<u8"))
        return self._cache["row_words"]

    def out_words(self) -> int:
        """Output words per block, padded to a multiple of four."""
        return 4 * ((self.rows + 255) // 256)

    def table_bytes(self) -> int:
        return self.row_bytes * 256 * self.out_words() * 8

    def table(self) -> np.ndarray:
        """(row_bytes * 256, out_words) lookup table for the byte kernel."""
        if "table" not in self._cache:
            self._cache["table"] = _build_table(self)
        return self._cache["table"]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExtractionMatrix):
            return NotImplemented
        return (self.rows, self.cols, self.seed) == (other.rows, other.cols, other.seed) \
            and np.array_equal(self.bits, other.bits)

    __hash__ = None  # type: ignore[assignment]


def _build_table(matrix: ExtractionMatrix) -> np.ndarray:
    W = matrix.out_words()
    nbytes = matrix.row_bytes
    dense = np.zeros((matrix.rows, nbytes * 8), dtype=np.uint8)
    dense[:, : matrix.cols] = matrix.dense()
    # column c as a packed vector over the output rows
    cols = np.zeros((nbytes * 8, W * 8), dtype=np.uint8)
    packed = np.packbits(dense.T, axis=1, bitorder="little")
    cols[:, : packed.shape[1]] = packed
    cols = cols.view("<u8").reshape(nbytes, 8, W)
    table = np.zeros((nbytes, 256, W), dtype=np.uint64)
    for v in range(1, 256):
        low = v & -v
        table[:, v] = table[:, v ^ low] ^ cols[:, low.bit_length() - 1]
    return table.reshape(nbytes * 256, W)


def matrix_from_seed(seed: int, rows: int = 256, cols: int = 512) -> ExtractionMatrix:
    """Fill a matrix row by row from SplitMix64(seed).

    Each row takes ceil(cols / 64) consecutive outputs; output word ``k`` of a
    row supplies columns 64k..64k+63, least-significant bit first. Bits past
    ``cols`` are discarded.
    """
    _check_dims(rows, cols)
    if not 0 <= seed < 2**64:
        raise MatrixConfigError("seed must be a 64-bit unsigned integer")
    nw = (cols + 63) // 64
    words = splitmix64(seed, rows * nw).astype("<u8").reshape(rows, nw)
    raw = words.view(np.uint8).reshape(rows, nw * 8)[:, : (cols + 7) // 8].copy()
    if cols % 8:
        raw[:, -1] &= (1 << (cols % 8)) - 1
    return ExtractionMatrix(rows, cols, raw, seed)


def write_matrix(matrix: ExtractionMatrix, destination: PathOrFile) -> int:
    fh, owned = _open(destination, "wb")
    try:
        fh.write(_MATRIX_HEADER.pack(MATRIX_MAGIC, matrix.rows, matrix.cols, matrix.seed))
        fh.write(matrix.bits.tobytes())
    finally:
        if owned:
            fh.close()
    return _MATRIX_HEADER.size + matrix.bits.size


def read_matrix(source: PathOrFile) -> ExtractionMatrix:
    fh, owned = _open(source, "rb")
    try:
        head = fh.read(_MATRIX_HEADER.size)
        if len(head) < _MATRIX_HEADER.size or head[:8] != MATRIX_MAGIC:
            raise MatrixConfigError("not a QRXMAT01 matrix file")
        _, rows, cols, seed = _MATRIX_HEADER.unpack(head)
        _check_dims(rows, cols)
        expected = rows * ((cols + 7) // 8)
        data = fh.read(expected + 1)
    finally:
        if owned:
            fh.close()
    if len(data) != expected:
        raise MatrixConfigError(
            f"matrix payload is {len(data)} bytes, expected {expected}")
    return ExtractionMatrix(rows, cols, np.frombuffer(data, dtype=np.uint8), seed)


# -- multiplication ---------------------------------------------------------

def _pick_method(matrix: ExtractionMatrix, method: str) -> str:
    if method == "auto":
        return "table" if matrix.table_bytes() <= TABLE_LIMIT_BYTES else "popcount"
    if method not in ("table", "popcount"):
        raise ValueError(f"unknown kernel {method!r}")
    return method


def _input_bytes(matrix: ExtractionMatrix, bits: BitStream, nblocks: int) -> np.ndarray:
    """Flat (nblocks * row_bytes) byte array, each block byte aligned."""
    if matrix.cols % 8 == 0:
        return bits.payload[: nblocks * matrix.row_bytes]
    dense = bits[: nblocks * matrix.cols].to_bits().reshape(nblocks, matrix.cols)
    return np.packbits(dense, axis=1, bitorder="little").ravel()


def _multiply(matrix: ExtractionMatrix, data: np.ndarray, nblocks: int,
              workers: int, method: str) -> np.ndarray:
    """Raw (nblocks, out_words) uint64 product, output bit r in word r // 64."""
    method = _pick_method(matrix, method)
    W = matrix.out_words()
    out = np.zeros((nblocks, W), dtype=np.uint64)
    if method == "table":
        table = matrix.table()
        kernel = _kernels.gf2_table_kernel4 if W == 4 else _kernels.gf2_table_kernel

        def run(first, last):
            nb = matrix.row_bytes
            kernel(data[first * nb: last * nb], table, last - first, nb, out[first:last])
    else:
        nw = (matrix.cols + 63) // 64
        xb = np.zeros((nblocks, nw * 8), dtype=np.uint8)
        xb[:, : matrix.row_bytes] = data.reshape(nblocks, matrix.row_bytes)
        xwords = xb.view("<u8")
        rows = matrix.row_words()

        def run(first, last):
            _kernels.gf2_popcount_kernel(xwords[first:last], rows, last - first, out[first:last])

    workers = max(1, min(workers, nblocks))
    if workers == 1:
        run(0, nblocks)
    else:
        edges = np.linspace(0, nblocks, workers + 1).astype(np.int64)
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, edges[:-1], edges[1:]))
    return out


def _pack_output(matrix: ExtractionMatrix, out: np.ndarray) -> BitStream:
    nblocks = out.shape[0]
    out_bytes = (matrix.rows + 7) // 8
    raw = out.astype("<u8", copy=False).view(np.uint8).reshape(nblocks, -1)[:, :out_bytes]
    if matrix.rows % 8 == 0:
        return BitStream._trusted(np.ascontiguousarray(raw).ravel(), nblocks * matrix.rows)
    dense = np.unpackbits(raw, axis=1, bitorder="little", count=matrix.rows)
    return BitStream.from_bits(dense.ravel())


def extract_block(matrix: ExtractionMatrix, x, method: str = "auto"):
    """GF(2) product of the matrix with one ``cols``-bit vector.

    ``x`` may be a BitStream or an array of 0/1; the result has the same kind.
    """
    as_stream = isinstance(x, BitStream)
    bits = x if as_stream else BitStream.from_bits(x)
    if bits.bit_count != matrix.cols:
        raise ValueError(f"input has {bits.bit_count} bits, matrix expects {matrix.cols}")
    y = _pack_output(matrix, _multiply(matrix, _input_bytes(matrix, bits, 1), 1, 1, method))
    return y if as_stream else y.to_bits()


def extract_stream(matrix: ExtractionMatrix, source: BitStream, workers: int = 1,
                   method: str = "auto") -> BitStream:
    """Extract every complete ``cols``-bit block of ``source`` in order.

    A trailing partial block is discarded (``source.bit_count % cols`` bits),
    never padded. The output is identical for any ``workers``.
    """
    if source.bit_count == 0:
        raise ValueError("cannot extract from an empty stream")
    nblocks = source.bit_count // matrix.cols
    if nblocks == 0:
        raise ValueError(
            f"stream of {source.bit_count} bits is shorter than one {matrix.cols}-bit block")
    data = _input_bytes(matrix, source, nblocks)
    return _pack_output(matrix, _multiply(matrix, data, nblocks, workers, method))


class StreamingExtractor:
    """Chunked front end for :func:`extract_stream`.

    Input chunks may have any length; leftover bits are carried to the next
    call, so the concatenated output does not depend on the chunking.
    """

    def __init__(self, matrix: ExtractionMatrix, workers: int = 1, method: str = "auto"):
        self.matrix = matrix
        self.workers = workers
        self.method = method
        self._carry = BitStream.empty()
        self.bits_in = 0
        self.bits_out = 0

    def feed(self, chunk: BitStream) -> BitStream:
        self.bits_in += chunk.bit_count
        buf = BitStream.concat([self._carry, chunk]) if self._carry.bit_count else chunk
        cols = self.matrix.cols
        usable = buf.bit_count - buf.bit_count % cols
        self._carry = buf[usable:]
        if usable == 0:
            return BitStream.empty()
        out = extract_stream(self.matrix, buf[:usable], self.workers, self.method)
        self.bits_out += out.bit_count
        return out

    @property
    def discarded_bits(self) -> int:
        """Bits held back because they do not fill a block."""
        return self._carry.bit_count


def max_extractable(delta: float, n: int, rows: int | None = None) -> int:
    """Extractable bits from ``n`` raw bits of an SV source with parameter
    ``delta``. Warns (does not raise) when ``rows`` exceeds that budget."""
    if not 0 <= delta <= 0.5:
        raise ValueError(f"delta must lie in [0, 1/2], got {delta}")
    budget = math.floor(-n * math.log2(1.0 - delta) + 0.0)
    if rows is not None and rows > budget:
        warnings.warn(f"{rows} output bits per block exceed the min-entropy budget of "
                      f"{budget} bits", RuntimeWarning, stacklevel=2)
    return budget
