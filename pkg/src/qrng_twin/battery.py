"""Small built-in randomness battery with Kolmogorov-Smirnov aggregation.

Acceptance follows the Dieharder-style band: a p-value passes when
``0.01 <= p <= 0.99``. The battery is not a substitute for Dieharder; raw
exports (see :func:`qrng_twin.bitstream.write_raw`) can be fed to it.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .bitstream import BitStream
from .report import write_csv, write_json

P_LOW = 0.01
P_HIGH = 0.99
MIN_BITS = 100
BLOCK_FREQUENCY_M = 2048
SEGMENTS = 100
SEGMENT_BITS = 10**6


def passes(p_value: float) -> bool:
    return P_LOW <= p_value <= P_HIGH


@dataclass(frozen=True)
class TestOutcome:
    test_name: str
    p_value: float
    statistic: float | None = None
    sub_p_values: tuple[float, ...] | None = None

    __test__ = False  # not a pytest class

    @property
    def passed(self) -> bool:
        # derived, never stored, so it cannot disagree with p_value
        return passes(self.p_value)

    def as_dict(self) -> dict:
        d = {"test_name": self.test_name, "p_value": self.p_value,
             "pass": self.passed, "statistic": self.statistic}
        if self.sub_p_values is not None:
            d["sub_p_values"] = list(self.sub_p_values)
        return d


def _require(bits: BitStream, minimum: int = MIN_BITS) -> int:
    n = bits.bit_count
    if n < minimum:
        raise ValueError(f"need at least {minimum} bits, got {n}")
    return n


def monobit_test(bits: BitStream) -> TestOutcome:
    """Frequency test: normalized excess of ones over zeros."""
    n = _require(bits)
    ones = bits.count_ones()
    s = (2 * ones - n) / math.sqrt(n)
    return TestOutcome("monobit", math.erfc(abs(s) / math.sqrt(2)), s)


def _transitions(bits: BitStream) -> int:
    """Number of t < N-1 with x_t != x_{t+1}."""
    w = bits.words()
    nxt = np.empty_like(w)
    nxt[:-1] = (w[:-1] >> np.uint64(1)) | (w[1:] << np.uint64(63))
    nxt[-1] = w[-1] >> np.uint64(1)
    count = int(np.bitwise_count(w ^ nxt).sum(dtype=np.int64))
    # the last bit was compared against the zero pad bit after it
    last = bits.bit_count - 1
    return count - int((bits.payload[last // 8] >> (last % 8)) & 1)


def runs_test(bits: BitStream) -> TestOutcome:
    """Runs test; fails outright (p = 0) when the ones proportion is off by
    more than 2/sqrt(N)."""
    n = _require(bits)
    pi = bits.count_ones() / n
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return TestOutcome("runs", 0.0, None)
    runs = _transitions(bits) + 1
    num = abs(runs - 2 * n * pi * (1 - pi))
    den = 2 * math.sqrt(2 * n) * pi * (1 - pi)
    return TestOutcome("runs", math.erfc(num / den), float(runs))


def block_frequency_test(bits: BitStream, block_size: int = BLOCK_FREQUENCY_M) -> TestOutcome:
    """Chi-square test of the ones proportion in disjoint blocks."""
    n = _require(bits)
    nblocks = n // block_size
    if nblocks == 0:
        raise ValueError(f"need at least one {block_size}-bit block, got {n} bits")
    if block_size % 8 == 0:
        packed = bits.payload[: nblocks * block_size // 8].reshape(nblocks, -1)
        ones = np.bitwise_count(packed).sum(axis=1, dtype=np.int64)
    else:
        ones = bits[: nblocks * block_size].to_bits().reshape(nblocks, -1).sum(axis=1)
    pi = ones / block_size
    chi2 = 4.0 * block_size * float(((pi - 0.5) ** 2).sum())
    return TestOutcome("block_frequency", float(special.gammaincc(nblocks / 2, chi2 / 2)), chi2)


def ks_aggregate(p_values: Sequence[float], name: str = "ks") -> TestOutcome:
    """One-sample KS test of ``p_values`` against U(0, 1), asymptotic
    Kolmogorov distribution."""
    x = np.sort(np.asarray(p_values, dtype=np.float64))
    n = x.size
    if n < 10:
        raise ValueError(f"need at least 10 p-values, got {n}")
    if np.any(~np.isfinite(x)) or x[0] < 0 or x[-1] > 1:
        raise ValueError("p-values must lie in [0, 1]")
    i = np.arange(1, n + 1)
    d = max(float((i / n - x).max()), float((x - (i - 1) / n).max()))
    p = float(special.kolmogorov(math.sqrt(n) * d))
    return TestOutcome(name, min(1.0, p), d, tuple(float(v) for v in p_values))


TESTS: dict[str, Callable[[BitStream], TestOutcome]] = {
    "monobit": monobit_test,
    "runs": runs_test,
    "block_frequency": block_frequency_test,
}


def segment_p_values(bits: BitStream, test: Callable[[BitStream], TestOutcome],
                     segments: int = SEGMENTS, segment_bits: int = SEGMENT_BITS,
                     workers: int = 1) -> list[float]:
    """p-values of ``test`` on consecutive disjoint segments, in order."""
    if segments * segment_bits > bits.bit_count:
        raise ValueError(
            f"{segments} segments of {segment_bits} bits need "
            f"{segments * segment_bits} bits, stream has {bits.bit_count}")
    starts = [i * segment_bits for i in range(segments)]

    def one(s):
        return test(bits[s: s + segment_bits]).p_value

    if workers <= 1:
        return [one(s) for s in starts]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, starts))


def run_battery(bits: BitStream, segments: int = SEGMENTS,
                segment_bits: int = SEGMENT_BITS, workers: int = 1) -> list[TestOutcome]:
    """Each test on the whole stream, then its KS aggregate over segments.

    The KS stage is skipped when the stream is too short for ``segments``
    segments.
    """
    out = [test(bits) for test in TESTS.values()]
    if segments * segment_bits <= bits.bit_count:
        for name, test in TESTS.items():
            ps = segment_p_values(bits, test, segments, segment_bits, workers)
            out.append(ks_aggregate(ps, name=f"{name}_ks"))
    return out


def write_battery(outcomes: Sequence[TestOutcome], out_dir: str | os.PathLike) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    js = os.path.join(out_dir, "battery.json")
    cs = os.path.join(out_dir, "battery.csv")
    write_json([o.as_dict() for o in outcomes], js)
    write_csv(cs, ["test_name", "p_value", "pass"],
              ((o.test_name, o.p_value, int(o.passed)) for o in outcomes))
    return [js, cs]
