"""Software twin of a gigabit ASE quantum random number generator.

Modules: :mod:`~qrng_twin.source` (entropy source and detector),
:mod:`~qrng_twin.entropy` (bias, correlation, delta and min-entropy),
:mod:`~qrng_twin.extractor` (seeded GF(2) matrix extractor),
:mod:`~qrng_twin.battery` (statistical tests), :mod:`~qrng_twin.bitstream`
(file formats) and :mod:`~qrng_twin.cli`.
"""

__version__ = "0.1.0"

from .bitstream import BitStream, read_stream, write_stream
from .extractor import ExtractionMatrix, extract_block, extract_stream, matrix_from_seed
from .source import SourceParams, SourceSimulator, simulate_bits

__all__ = [
    "BitStream",
    "ExtractionMatrix",
    "SourceParams",
    "SourceSimulator",
    "extract_block",
    "extract_stream",
    "matrix_from_seed",
    "read_stream",
    "simulate_bits",
    "write_stream",
    "__version__",
]
