"""Numba inner loops. Inputs are packed LSB-first payloads (see bitstream)."""
import numba
import numpy as np

_jit = numba.njit(nogil=True, cache=True)


@_jit
def window_tally(payload, start, stop, order, counts):
    """Add overlapping ``order``-bit windows ending at bit t, start <= t < stop,
    into ``counts``. Code layout: newest bit in the LSB, history above it."""
    mask = (1 << order) - 1
    first = start - order + 1
    if first < 0:
        first = 0
    code = 0
    for i in range(first, stop):
        bit = (payload[i >> 3] >> (i & 7)) & 1
        code = ((code << 1) | bit) & mask
        if i >= start and i >= order - 1:
            counts[code] += 1


@_jit
def block_tally(payload, nblocks, width, counts):
    """Tally disjoint ``width``-bit blocks. Code: first bit in the MSB."""
    i = 0
    for _ in range(nblocks):
        code = 0
        for _ in range(width):
            code = (code << 1) | ((payload[i >> 3] >> (i & 7)) & 1)
            i += 1
        counts[code] += 1


@_jit
def gf2_table_kernel(data, table, nblocks, in_bytes, out):
    """XOR together the precomputed column combinations selected by each input
    byte. ``table`` is (in_bytes * 256, W) with W a multiple of 4.

    Callers pass views starting at the first block: a loop starting at zero
    compiles to markedly faster code than one over (first, last).
    """
    groups = table.shape[1] // 4
    for b in range(nblocks):
        base = b * in_bytes
        for g in range(groups):
            w = 4 * g
            a0 = np.uint64(0)
            a1 = np.uint64(0)
            a2 = np.uint64(0)
            a3 = np.uint64(0)
            for p in range(in_bytes):
                row = p * 256 + np.intp(data[base + p])
                a0 ^= table[row, w]
                a1 ^= table[row, w + 1]
                a2 ^= table[row, w + 2]
                a3 ^= table[row, w + 3]
            out[b, w] = a0
            out[b, w + 1] = a1
            out[b, w + 2] = a2
            out[b, w + 3] = a3


@_jit
def gf2_table_kernel4(data, table, nblocks, in_bytes, out):
    """:func:`gf2_table_kernel` specialised to a single group of 4 words."""
    for b in range(nblocks):
        base = b * in_bytes
        a0 = np.uint64(0)
        a1 = np.uint64(0)
        a2 = np.uint64(0)
        a3 = np.uint64(0)
        for p in range(in_bytes):
            row = p * 256 + data[base + p]
            a0 ^= table[row, 0]
            a1 ^= table[row, 1]
            a2 ^= table[row, 2]
            a3 ^= table[row, 3]
        out[b, 0] = a0
        out[b, 1] = a1
        out[b, 2] = a2
        out[b, 3] = a3


@_jit
def gf2_popcount_kernel(xwords, rows, nblocks, out):
    """Row-wise inner products: AND, XOR-fold the words, then parity fold."""
    nrows, nw = rows.shape
    for b in range(nblocks):
        for r in range(nrows):
            acc = np.uint64(0)
            for k in range(nw):
                acc ^= rows[r, k] & xwords[b, k]
            acc ^= acc >> np.uint64(32)
            acc ^= acc >> np.uint64(16)
            acc ^= acc >> np.uint64(8)
            acc ^= acc >> np.uint64(4)
            acc ^= acc >> np.uint64(2)
            acc ^= acc >> np.uint64(1)
            if acc & np.uint64(1):
                out[b, r >> 6] |= np.uint64(1) << np.uint64(r & 63)
