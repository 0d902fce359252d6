"""Bias, serial correlation, Santha-Vazirani parameter and min-entropy
estimates for raw bitstreams.

Conventions
-----------
* Block statistics (zero histogram, block min-entropy) use disjoint blocks.
* Autocorrelation and conditional probabilities use overlapping windows.
* An estimate of *order* ``i`` looks at windows of ``i`` bits and predicts
  the newest bit from the ``i - 1`` bits before it, so order 1 is the plain
  bit bias and order 2 conditions on one previous bit.
* Tallies are exact integers; division happens only when a report value is
  produced.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from . import _kernels
from .bitstream import BitStream
from .report import SCHEMA_VERSION, write_csv, write_json

DEFAULT_MIN_HISTORY_COUNT = 100
MAX_ORDER = 24


class DegenerateStreamError(ValueError):
    """The stream has zero variance, so correlation is undefined."""


class InsufficientSampleError(ValueError):
    """Too few observations for a meaningful estimate."""


# -- result types -----------------------------------------------------------

@dataclass(frozen=True)
class BlockHistogram:
    block_size: int
    counts: np.ndarray  # counts[k] = number of blocks with k zeros
    total_blocks: int
    discarded_bits: int = 0

    @property
    def p0(self) -> float:
        k = np.arange(self.block_size + 1)
        return float((k * self.counts).sum() / (self.total_blocks * self.block_size))

    @property
    def sigma_m(self) -> float:
        """Empirical standard deviation of the zero count per block."""
        k = np.arange(self.block_size + 1, dtype=np.float64)
        mean = (k * self.counts).sum() / self.total_blocks
        return float(math.sqrt(((k - mean) ** 2 * self.counts).sum() / self.total_blocks))

    @property
    def sigma_t(self) -> float:
        """Binomial standard deviation at the observed P0."""
        return binomial_sigma(self.block_size, self.p0)

    def as_dict(self) -> dict[int, int]:
        return {int(k): int(c) for k, c in enumerate(self.counts) if c}


@dataclass(frozen=True)
class AutocorrResult:
    max_lag: int
    coefficients: np.ndarray  # coefficients[j - 1] = R(j)
    sample_size: int

    @property
    def finite_size_sigma(self) -> float:
        return 1.0 / math.sqrt(self.sample_size)


@dataclass(frozen=True)
class SvEstimate:
    """Estimate of the Santha-Vazirani parameter at one conditioning order.

    ``min_history_count`` and ``sample_size`` are None for estimates derived
    analytically from a correlation coefficient.
    """

    order: int
    max_cond_prob: float
    min_history_count: int | None = None
    sample_size: int | None = None
    histories_used: int = 0
    histories_excluded: int = 0

    @property
    def delta(self) -> float:
        return 1.0 - self.max_cond_prob


@dataclass(frozen=True)
class MinEntropyPoint:
    n: int
    h_min: float
    blocks: int
    low_confidence: bool


@dataclass(frozen=True)
class MinEntropyCurve:
    points: list[MinEntropyPoint]

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([p.n for p in self.points]),
                np.array([p.h_min for p in self.points]))


# -- bias -------------------------------------------------------------------

def zero_block_histogram(bits: BitStream, block_size: int = 512) -> BlockHistogram:
    """Histogram of the number of zeros in each disjoint block."""
    if block_size < 1:
        raise ValueError("block_size must be positive")
    nblocks = bits.bit_count // block_size
    if nblocks == 0:
        raise InsufficientSampleError(
            f"stream of {bits.bit_count} bits is shorter than one {block_size}-bit block")
    used = nblocks * block_size
    if block_size % 8 == 0:
        packed = bits.payload[: used // 8].reshape(nblocks, block_size // 8)
        ones = np.bitwise_count(packed).sum(axis=1, dtype=np.int64)
    else:
        ones = bits[:used].to_bits().reshape(nblocks, block_size).sum(axis=1, dtype=np.int64)
    counts = np.bincount(block_size - ones, minlength=block_size + 1).astype(np.int64)
    return BlockHistogram(block_size, counts, nblocks, bits.bit_count - used)


def binomial_pmf(n: int, k, p0: float):
    """Probability of ``k`` zeros in ``n`` bits when each bit is 0 with
    probability ``p0``."""
    if not 0 <= p0 <= 1:
        raise ValueError(f"p0 must be a probability, got {p0}")
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k > n):
        raise ValueError("k must satisfy 0 <= k <= n")
    logp = (special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)
            + special.xlogy(k, p0) + special.xlogy(n - k, 1.0 - p0))
    out = np.exp(logp)
    return float(out) if out.ndim == 0 else out


def binomial_sigma(n: int, p0: float) -> float:
    return math.sqrt(n * p0 * (1.0 - p0))


# -- serial correlation -----------------------------------------------------

def _lag_overlap(words: np.ndarray, lag: int, nwords: int, chunk: int = 1 << 21) -> int:
    """Count t with x_t = x_{t+lag} = 1. ``words`` carries >= 1 zero word of
    padding beyond ``nwords`` plus lag // 64 more."""
    q, s = divmod(lag, 64)
    total = 0
    for a in range(0, nwords, chunk):
        b = min(a + chunk, nwords)
        lo = words[a + q: b + q]
        if s:
            hi = words[a + q + 1: b + q + 1]
            shifted = (lo >> np.uint64(s)) | (hi << np.uint64(64 - s))
        else:
            shifted = lo
        total += int(np.bitwise_count(words[a:b] & shifted).sum(dtype=np.int64))
    return total


def autocorrelation(bits: BitStream, max_lag: int) -> AutocorrResult:
    """Pearson correlation between X[0, N-j) and X[j, N) for j = 1..max_lag.

    Invariant under complementing every bit.
    """
    n_bits = bits.bit_count
    if max_lag < 1:
        raise ValueError("max_lag must be positive")
    if n_bits <= max_lag + 1:
        raise InsufficientSampleError(
            f"need more than {max_lag + 1} bits for max_lag={max_lag}")
    base = bits.words()
    nwords = base.size
    words = np.zeros(nwords + max_lag // 64 + 2, dtype="<u8")
    words[:nwords] = base
    total_ones = bits.count_ones()
    edge = min(max_lag, n_bits)
    head = np.concatenate([[0], np.cumsum(bits[:edge].to_bits(), dtype=np.int64)])
    tail_bits = bits[n_bits - edge:].to_bits()[::-1]
    tail = np.concatenate([[0], np.cumsum(tail_bits, dtype=np.int64)])

    coeffs = np.empty(max_lag)
    for j in range(1, max_lag + 1):
        n = n_bits - j
        ones_a = total_ones - int(tail[j])  # X[0, n)
        ones_b = total_ones - int(head[j])  # X[j, N)
        both = _lag_overlap(words, j, nwords)
        var_a = ones_a * (n - ones_a)
        var_b = ones_b * (n - ones_b)
        if var_a == 0 or var_b == 0:
            raise DegenerateStreamError("degenerate stream: zero variance window")
        # scaled by n^2 to stay in exact integers until the final division
        cov = both * n - ones_a * ones_b
        coeffs[j - 1] = cov / math.sqrt(var_a) / math.sqrt(var_b)
    return AutocorrResult(max_lag, coeffs, n_bits)


# -- Santha-Vazirani parameter ----------------------------------------------

def binary_entropy(p: float) -> float:
    """Shannon entropy in bits of a Bernoulli(p) variable, 0 log 0 = 0."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must be a probability, got {p}")
    return float(-(special.xlogy(p, p) + special.xlogy(1 - p, 1 - p)) / math.log(2))


def mutual_info_from_corr(r1: float) -> float:
    """Gaussian-approximation mutual information, in bits, of two variables
    with correlation ``r1``: -1/2 log2(1 - r1^2)."""
    if not -1 < r1 < 1:
        raise ValueError(f"|r1| must be < 1, got {r1}")
    return -0.5 * math.log2(1.0 - r1 * r1)


def delta_from_cond_entropy(h: float, tol: float = 1e-10) -> SvEstimate:
    """Largest conditional probability compatible with conditional entropy
    ``h``: solves H_b(p) = h for p in [1/2, 1] by bisection.

    The result conditions on one previous bit, so it is tagged order 2.
    """
    if not 0 <= h <= 1:
        raise ValueError(f"conditional entropy must lie in [0, 1], got {h}")
    lo, hi = 0.5, 1.0  # H_b decreases from 1 to 0 on this interval
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if binary_entropy(mid) > h:
            lo = mid
        else:
            hi = mid
    p = 0.5 * (lo + hi)
    if h == 1:
        p = 0.5
    elif h == 0:
        p = 1.0
    return SvEstimate(order=2, max_cond_prob=p)


def delta_from_correlation(p0: float, r1: float) -> SvEstimate:
    """Order-2 estimate from the bias and lag-1 correlation alone (assumes
    only neighbouring bits are correlated)."""
    h = binary_entropy(p0) - mutual_info_from_corr(r1)
    return delta_from_cond_entropy(min(1.0, max(0.0, h)))


def _check_order(order: int) -> None:
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 1..{MAX_ORDER}, got {order}")


def window_tally(bits: BitStream, order: int, start: int | None = None,
                 workers: int = 1) -> np.ndarray:
    """Counts of every overlapping ``order``-bit window (newest bit in the
    LSB) whose last bit index is >= ``start`` (default ``order - 1``).

    With ``workers > 1`` the range is sharded; the merge is an exact integer
    sum, so the result does not depend on the worker count.
    """
    _check_order(order)
    start = order - 1 if start is None else max(start, order - 1)
    stop = bits.bit_count
    payload = bits.payload
    if workers <= 1 or stop - start < 1 << 20:
        counts = np.zeros(1 << order, dtype=np.int64)
        if stop > start:
            _kernels.window_tally(payload, start, stop, order, counts)
        return counts
    edges = np.linspace(start, stop, workers + 1).astype(np.int64)

    def shard(i):
        c = np.zeros(1 << order, dtype=np.int64)
        _kernels.window_tally(payload, int(edges[i]), int(edges[i + 1]), order, c)
        return c

    with ThreadPoolExecutor(workers) as pool:
        return sum(pool.map(shard, range(workers)))


def _sv_from_tally(counts: np.ndarray, order: int, min_history_count: int,
                   sample_size: int) -> SvEstimate:
    pairs = counts.reshape(-1, 2)  # row = history, column = next bit
    totals = pairs.sum(axis=1)
    ok = totals >= min_history_count
    if not ok.any():
        raise InsufficientSampleError(
            f"insufficient sample: no order-{order} history reaches "
            f"{min_history_count} occurrences")
    best = pairs.max(axis=1)[ok]
    tot = totals[ok]
    # exact comparison of fractions best/tot by cross multiplication
    idx = 0
    for i in range(1, best.size):
        if int(best[i]) * int(tot[idx]) > int(best[idx]) * int(tot[i]):
            idx = i
    return SvEstimate(order=order,
                      max_cond_prob=float(best[idx]) / float(tot[idx]),
                      min_history_count=min_history_count,
                      sample_size=sample_size,
                      histories_used=int(ok.sum()),
                      histories_excluded=int((~ok & (totals > 0)).sum()))


def max_conditional_probability(bits: BitStream, order: int,
                                min_history_count: int = DEFAULT_MIN_HISTORY_COUNT,
                                workers: int = 1) -> SvEstimate:
    """Maximum empirical P(next bit | previous order-1 bits) over histories
    seen at least ``min_history_count`` times."""
    if min_history_count < 1:
        raise ValueError("min_history_count must be positive")
    counts = window_tally(bits, order, workers=workers)
    return _sv_from_tally(counts, order, min_history_count, bits.bit_count)


def sv_sweep(bits: BitStream, orders: Sequence[int],
             min_history_count: int = DEFAULT_MIN_HISTORY_COUNT,
             workers: int = 1) -> list[SvEstimate | InsufficientSampleError]:
    """Estimates for several orders from a single tally at the largest order.

    Lower orders are marginals of that tally, so every order predicts the
    same set of bit positions. Refining a history can then only raise the
    maximum, and delta is non-increasing in order except where the count
    floor removes histories. Orders that fail the floor yield the exception
    object in their slot.
    """
    orders = sorted(set(orders))
    top = orders[-1]
    counts = window_tally(bits, top, workers=workers)
    out: list[SvEstimate | InsufficientSampleError] = []
    for order in orders:
        marginal = counts.reshape(-1, 1 << order).sum(axis=0)
        try:
            out.append(_sv_from_tally(marginal, order, min_history_count, bits.bit_count))
        except InsufficientSampleError as exc:
            out.append(exc)
    return out


# -- min-entropy ------------------------------------------------------------

def block_tally(bits: BitStream, n: int) -> np.ndarray:
    """Counts of each n-bit pattern over disjoint blocks (first bit in MSB)."""
    _check_order(n)
    nblocks = bits.bit_count // n
    counts = np.zeros(1 << n, dtype=np.int64)
    _kernels.block_tally(bits.payload, nblocks, n, counts)
    return counts


def min_entropy_point(bits: BitStream, n: int) -> MinEntropyPoint:
    if bits.bit_count == 0:
        raise InsufficientSampleError("empty stream")
    nblocks = bits.bit_count // n
    if nblocks == 0:
        raise InsufficientSampleError(f"stream shorter than one {n}-bit block")
    counts = block_tally(bits, n)
    h = -math.log2(int(counts.max()) / nblocks)
    return MinEntropyPoint(n, h + 0.0, nblocks, nblocks < 100 * 2 ** n)


def min_entropy_blocks(bits: BitStream, n: int) -> float:
    """-log2 of the most frequent n-bit block over disjoint blocks."""
    return min_entropy_point(bits, n).h_min


def min_entropy_curve(bits: BitStream, ns: Iterable[int]) -> MinEntropyCurve:
    return MinEntropyCurve([min_entropy_point(bits, n) for n in ns])


def sv_min_entropy_bound(delta: float, n: int) -> float:
    """Min-entropy lower bound -n log2(1 - delta) for n bits of an SV source."""
    if not 0 <= delta <= 0.5:
        raise ValueError(f"delta must lie in [0, 1/2], got {delta}")
    return -n * math.log2(1.0 - delta) + 0.0


# -- aggregated report ------------------------------------------------------

@dataclass
class AnalysisReport:
    sample_bits: int
    block_size: int
    p0: float | None = None
    sigma_m: float | None = None
    sigma_t: float | None = None
    total_blocks: int | None = None
    block_counts: list[int] | None = None
    autocorr: list[float] | None = None
    autocorr_sigma: float | None = None
    delta_from_r1: float | None = None
    sv: list[dict] = field(default_factory=list)
    min_entropy: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    @property
    def ok(self) -> bool:
        return not self.errors

    def _fail(self, stage: str, exc: Exception) -> None:
        self.errors.append({"stage": stage, "error": type(exc).__name__,
                            "message": str(exc)})


def analyze(bits: BitStream, block_size: int = 512, max_lag: int = 100,
            orders: Sequence[int] = tuple(range(1, 11)),
            min_history_count: int = DEFAULT_MIN_HISTORY_COUNT,
            hmin_ns: Sequence[int] = tuple(range(1, 17)),
            workers: int = 1) -> AnalysisReport:
    """Run every estimator; failures are recorded per stage, never raised."""
    rep = AnalysisReport(sample_bits=bits.bit_count, block_size=block_size)
    try:
        hist = zero_block_histogram(bits, block_size)
        rep.p0, rep.sigma_m, rep.sigma_t = hist.p0, hist.sigma_m, hist.sigma_t
        rep.total_blocks = hist.total_blocks
        rep.block_counts = hist.counts.tolist()
    except ValueError as exc:
        rep._fail("block_histogram", exc)
    if rep.p0 is None and bits.bit_count:
        rep.p0 = 1.0 - bits.count_ones() / bits.bit_count
    try:
        ac = autocorrelation(bits, max_lag)
        rep.autocorr = ac.coefficients.tolist()
        rep.autocorr_sigma = ac.finite_size_sigma
        if rep.p0 is not None:
            rep.delta_from_r1 = delta_from_correlation(rep.p0, ac.coefficients[0]).delta
    except ValueError as exc:
        rep._fail("autocorrelation", exc)
    try:
        for order, est in zip(sorted(set(orders)),
                              sv_sweep(bits, orders, min_history_count, workers)):
            if isinstance(est, Exception):
                rep._fail(f"sv_order_{order}", est)
                continue
            rep.sv.append({"order": order, "max_cond_prob": est.max_cond_prob,
                           "delta": est.delta, "histories_used": est.histories_used,
                           "histories_excluded": est.histories_excluded,
                           "min_history_count": min_history_count,
                           "sv_bound_512": sv_min_entropy_bound(min(0.5, est.delta), 512)})
    except ValueError as exc:
        rep._fail("sv", exc)
    for n in hmin_ns:
        try:
            pt = min_entropy_point(bits, n)
        except ValueError as exc:
            rep._fail(f"hmin_{n}", exc)
            continue
        rep.min_entropy.append({"n": n, "h_min": pt.h_min, "blocks": pt.blocks,
                                "low_confidence": pt.low_confidence})
    return rep


def write_analysis(rep: AnalysisReport, out_dir: str | os.PathLike) -> list[str]:
    """Write analysis.json and the four per-figure CSV files."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def path(name):
        p = os.path.join(out_dir, name)
        paths.append(p)
        return p

    write_json(rep, path("analysis.json"))
    if rep.block_counts is not None:
        k = np.arange(rep.block_size + 1)
        expected = binomial_pmf(rep.block_size, k, rep.p0) * rep.total_blocks
        write_csv(path("block_histogram.csv"), ["k_zeros", "count", "binomial_expected"],
                  zip(k, rep.block_counts, expected))
    if rep.autocorr is not None:
        write_csv(path("autocorrelation.csv"), ["lag", "r", "finite_size_sigma"],
                  ((j + 1, r, rep.autocorr_sigma) for j, r in enumerate(rep.autocorr)))
    write_csv(path("max_cond_prob.csv"),
              ["order", "max_cond_prob", "delta", "histories_used", "histories_excluded"],
              ((s["order"], s["max_cond_prob"], s["delta"], s["histories_used"],
                s["histories_excluded"]) for s in rep.sv))
    write_csv(path("hmin.csv"), ["n", "h_min", "blocks", "low_confidence"],
              ((p["n"], p["h_min"], p["blocks"], int(p["low_confidence"]))
               for p in rep.min_entropy))
    return paths
