import os

import numpy as np
import pytest

from qrng_twin import BitStream, SourceParams, simulate_bits

DATA = os.path.join(os.path.dirname(__file__), "data")


def iid_stream(n_bits: int, seed: int = 12345) -> BitStream:
    """Unbiased i.i.d. bits straight from numpy's PCG64."""
    rng = np.random.default_rng(seed)
    payload = rng.integers(0, 256, (n_bits + 7) // 8, dtype=np.uint8)
    if n_bits % 8:
        payload[-1] &= (1 << (n_bits % 8)) - 1
    return BitStream(payload, n_bits)


@pytest.fixture(scope="session")
def calibrated():
    return SourceParams.calibrated()


@pytest.fixture(scope="session")
def calibrated_raw_1e8(calibrated):
    return simulate_bits(calibrated, 10**8)


@pytest.fixture(scope="session")
def iid_1e8():
    return iid_stream(10**8)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
