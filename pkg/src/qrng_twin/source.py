"""Simulated ASE entropy source and detection chain.

The chain is: multimode thermal photon counts -> additive Gaussian detector
noise -> single-pole low-pass (finite receiver bandwidth) -> AC-coupled
limiting amplifier, modeled as a comparison against a slow exponential moving
average of the signal. All randomness comes from numpy generators spawned
from ``SourceParams.rng_seed``, one per physical noise process, so a stream is
reproducible and independent of the internal chunk size.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal, special

from .bitstream import BitStream

# probabilities below this are reported as exactly zero
UNDERFLOW = 1e-300
# published reference value, kept for comparison; the formula gives sqrt(40 * 1000 * 1001) = 6327.7
REFERENCE_SIGMA_P = 6246.0

_CHUNK = 1 << 22


@dataclass(frozen=True)
class SourceParams:
    """Physical and sampling parameters of the simulated source.

    ``n_bar`` is the mean photon number per mode and ``modes_m`` the number of
    modes seen by the detector (40 for a 2.5 GHz receiver). ``noise_sigma`` is
    the detector noise in photon units. ``filter_beta`` is the pole of the
    bandwidth filter, ``threshold_tau`` the time constant (in samples) of the
    AC-coupled threshold, and ``threshold_offset`` a constant shift of that
    threshold in photon units, used to reproduce the measured bias.
    """

    n_bar: float = 1000.0
    modes_m: int = 40
    noise_sigma: float = 610.0
    filter_beta: float = 0.0
    threshold_tau: float = 1e4
    threshold_offset: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.n_bar >= 0 and math.isfinite(self.n_bar)):
            raise ValueError(f"n_bar must be finite and >= 0, got {self.n_bar}")
        if int(self.modes_m) != self.modes_m or self.modes_m < 1:
            raise ValueError(f"modes_m must be a positive integer, got {self.modes_m}")
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise ValueError(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if not 0 <= self.filter_beta < 1:
            raise ValueError(f"filter_beta must lie in [0, 1), got {self.filter_beta}")
        if not (self.threshold_tau >= 1 and math.isfinite(self.threshold_tau)):
            raise ValueError(f"threshold_tau must be >= 1, got {self.threshold_tau}")
        if not math.isfinite(self.threshold_offset):
            raise ValueError("threshold_offset must be finite")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    def replace(self, **changes) -> "SourceParams":
        return dataclasses.replace(self, **changes)

    @classmethod
    def calibrated(cls) -> "SourceParams":
        """Shipped defaults, with beta and offset from :func:`calibrate`."""
        from .config import default_config

        return default_config().source


# -- photon statistics ------------------------------------------------------

def _check_nbar(n_bar: float) -> None:
    if n_bar < 0:
        raise ValueError(f"n_bar must be >= 0, got {n_bar}")


def _from_log(logp):
    p = np.exp(logp)
    return np.where(p < UNDERFLOW, 0.0, p)


def pmf_single_mode(n_bar: float, n):
    """Bose-Einstein probability of ``n`` photons in one mode of mean ``n_bar``.

    Accepts a scalar or an integer array for ``n``.
    """
    _check_nbar(n_bar)
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("photon number must be non-negative")
    if n_bar == 0:
        out = np.where(n == 0, 1.0, 0.0)
    else:
        # same expression as pmf_multimode at m = 1, so the two agree exactly
        logp = -n * math.log1p(1.0 / n_bar) - math.log1p(n_bar)
        out = _from_log(logp)
    return float(out) if out.ndim == 0 else out


def pmf_multimode(n_bar: float, n, m: int):
    """Photon-number distribution of ``m`` thermal modes (negative binomial).

    Evaluated in log space with log-gamma. ``n_bar`` is the mean per mode.
    """
    _check_nbar(n_bar)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("photon number must be non-negative")
    if n_bar == 0:
        out = np.where(n == 0, 1.0, 0.0)
    else:
        logp = (special.gammaln(n + m) - special.gammaln(n + 1) - special.gammaln(m)
                - n * math.log1p(1.0 / n_bar) - m * math.log1p(n_bar))
        out = _from_log(logp)
    return float(out) if out.ndim == 0 else out


def moments(n_bar: float, m: int) -> tuple[float, float]:
    """Mean and variance of :func:`pmf_multimode`."""
    _check_nbar(n_bar)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return m * n_bar, m * n_bar * (1.0 + n_bar)


# -- sampling and detection -------------------------------------------------

def _generators(seed: int) -> tuple[np.random.Generator, ...]:
    # intensity, shot noise, detector noise
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def _draw_counts(params: SourceParams, count: int, g_int, g_shot) -> np.ndarray:
    if params.n_bar == 0:
        return np.zeros(count, dtype=np.int64)
    intensity = g_int.gamma(params.modes_m, params.n_bar, size=count)
    return g_shot.poisson(intensity)


def sample_photon_counts(params: SourceParams, count: int) -> np.ndarray:
    """I.i.d. photon counts drawn as a Gamma-Poisson mixture (exact for the
    multimode law): a Gamma(m, n_bar) intensity, then a Poisson count."""
    if count < 1:
        raise ValueError("count must be >= 1")
    g_int, g_shot, _ = _generators(params.rng_seed)
    return _draw_counts(params, count, g_int, g_shot)


class _Filter:
    """Stateful bandwidth filter: y_t = (1-b)(x_t + g_t) + b*y_{t-1}."""

    def __init__(self, beta: float):
        self.beta = beta
        self.y_prev: float | None = None

    def __call__(self, noisy: np.ndarray) -> np.ndarray:
        if self.y_prev is None:
            self.y_prev = float(noisy[0])
        if self.beta == 0:
            y = noisy.astype(np.float64, copy=True)
        else:
            y, _ = signal.lfilter([1.0 - self.beta], [1.0, -self.beta], noisy,
                                  zi=[self.beta * self.y_prev])
        self.y_prev = float(y[-1])
        return y


class _Discriminator:
    """AC-coupled comparator against an EMA threshold (ties give 0)."""

    def __init__(self, tau: float, offset: float):
        self.alpha = 1.0 / tau
        self.offset = offset
        self.theta_prev: float | None = None

    def __call__(self, y: np.ndarray) -> np.ndarray:
        if self.theta_prev is None:
            self.theta_prev = float(y[0])
        a = self.alpha
        theta, _ = signal.lfilter([a], [1.0, -(1.0 - a)], y,
                                  zi=[(1.0 - a) * self.theta_prev])
        before = np.empty_like(theta)
        before[0] = self.theta_prev
        before[1:] = theta[:-1]
        self.theta_prev = float(theta[-1])
        return (y > before + self.offset).astype(np.uint8)


def detector_chain(counts, params: SourceParams) -> np.ndarray:
    """Add detector noise and apply the bandwidth filter; returns analog
    samples in photon-equivalent units."""
    counts = np.asarray(counts)
    if counts.size == 0:
        raise ValueError("detector_chain needs a non-empty input")
    _, _, g_noise = _generators(params.rng_seed)
    return _Filter(params.filter_beta)(_add_noise(counts, params.noise_sigma, g_noise))


def _add_noise(counts: np.ndarray, sigma: float, g_noise) -> np.ndarray:
    x = counts.astype(np.float64)
    if sigma > 0:
        x += g_noise.normal(0.0, sigma, size=x.size)
    return x


def discriminate(analog, params: SourceParams) -> BitStream:
    """Threshold analog samples into bits: 1 when the sample exceeds the
    previous EMA threshold plus ``threshold_offset``, otherwise 0."""
    analog = np.asarray(analog, dtype=np.float64)
    if analog.size == 0:
        raise ValueError("discriminate needs a non-empty input")
    d = _Discriminator(params.threshold_tau, params.threshold_offset)
    return BitStream.from_bits(d(analog))


class SourceSimulator:
    """Streaming source -> detector -> discriminator pipeline.

    Successive :meth:`generate` calls continue the same stream, so
    ``generate(a)`` then ``generate(b)`` equals one ``generate(a + b)``.
    """

    def __init__(self, params: SourceParams):
        self.params = params
        self._g_int, self._g_shot, self._g_noise = _generators(params.rng_seed)
        self._filter = _Filter(params.filter_beta)
        self._disc = _Discriminator(params.threshold_tau, params.threshold_offset)
        self.samples_drawn = 0

    def _bits(self, n: int) -> np.ndarray:
        counts = _draw_counts(self.params, n, self._g_int, self._g_shot)
        y = self._filter(_add_noise(counts, self.params.noise_sigma, self._g_noise))
        self.samples_drawn += n
        return self._disc(y)

    def generate(self, n_bits: int) -> BitStream:
        if n_bits < 0:
            raise ValueError("n_bits must be non-negative")
        pieces = []
        carry = np.zeros(0, dtype=np.uint8)
        remaining = n_bits
        while remaining:
            n = min(_CHUNK, remaining)
            bits = self._bits(n)
            if carry.size:
                bits = np.concatenate([carry, bits])
            whole = bits.size - bits.size % 8 if remaining > n else bits.size
            pieces.append(np.packbits(bits[:whole], bitorder="little"))
            carry = bits[whole:]
            remaining -= n
        if not pieces:
            return BitStream.empty()
        return BitStream._trusted(np.concatenate(pieces), n_bits)


def simulate_bits(params: SourceParams, n_bits: int) -> BitStream:
    """Raw bitstream of ``n_bits`` from a fresh simulator."""
    return SourceSimulator(params).generate(n_bits)


# -- calibration ------------------------------------------------------------

def _measure(params: SourceParams, n_bits: int) -> tuple[float, float]:
    from .entropy import autocorrelation

    bits = simulate_bits(params, n_bits)
    p0 = 1.0 - bits.count_ones() / n_bits
    return p0, float(autocorrelation(bits, 1).coefficients[0])


def _bisect(f, lo: float, hi: float, target: float, tol: float, increasing: bool) -> float:
    for _ in range(60):
        if hi - lo < tol:
            break
        mid = 0.5 * (lo + hi)
        if (f(mid) < target) == increasing:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate(params: SourceParams, r1_target: float = 0.13078,
              p0_target: float = 0.4920, n_bits: int = 10**7,
              rounds: int = 2) -> SourceParams:
    """Fit ``filter_beta`` to a lag-1 autocorrelation and ``threshold_offset``
    to a zero probability by alternating bisections.

    Every trial reuses ``params.rng_seed`` (common random numbers), which keeps
    both objectives monotone in their knob.
    """
    mean, var = moments(params.n_bar, params.modes_m)
    spread = math.sqrt(var + params.noise_sigma ** 2)
    current = params
    for _ in range(rounds):
        beta = _bisect(lambda b: _measure(current.replace(filter_beta=b), n_bits)[1],
                       0.0, 0.5, r1_target, 1e-4, increasing=True)
        current = current.replace(filter_beta=beta)
        # raising the threshold produces more zeros
        offset = _bisect(lambda o: _measure(current.replace(threshold_offset=o), n_bits)[0],
                         -0.5 * spread, 0.5 * spread, p0_target, 0.05, increasing=True)
        current = current.replace(threshold_offset=offset)
    return current
