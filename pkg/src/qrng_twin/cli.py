"""``qrng-twin`` command-line tool.

Exit codes: 0 success, 1 test or analysis failure, 2 usage, config or setup
error.
"""
from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time

import numpy as np

from . import __version__
from .bitstream import (BitStream, BitStreamFormatError, BitStreamReader,
                        BitStreamWriter, read_stream, write_raw)
from .config import ConfigError, PipelineConfig, default_config, load_config
from .extractor import (ExtractionMatrix, MatrixConfigError, StreamingExtractor,
                        extract_stream, matrix_from_seed, read_matrix, write_matrix)
from .report import write_json
from .source import SourceSimulator

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CHUNK_BITS = 1 << 26
BENCH_WORKERS = (1, 2, 4, 8)


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _resolve(args) -> PipelineConfig:
    cfg = default_config()
    if args.config:
        try:
            cfg = load_config(args.config, base=cfg)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    changes = {}
    if args.bits is not None:
        changes["bits"] = args.bits
    if args.rows is not None:
        changes["rows"] = args.rows
    if args.cols is not None:
        changes["cols"] = args.cols
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.seed is not None:
        key = "rng_seed" if args.command == "generate" else "matrix_seed"
        changes[key] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")
    return path


def _matrix(args, cfg: PipelineConfig) -> ExtractionMatrix:
    if args.matrix:
        try:
            return read_matrix(args.matrix)
        except OSError as exc:
            raise UsageError(f"cannot read matrix {args.matrix}: {exc}") from exc
    return matrix_from_seed(cfg.matrix_seed, cfg.rows, cfg.cols)


# -- commands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _resolve(args)
    out = _outdir(args.out)
    path = os.path.join(out, "raw.qrbs")
    sim = SourceSimulator(cfg.source)
    t0 = time.perf_counter()
    with BitStreamWriter(path) as writer:
        remaining = cfg.bits
        while remaining:
            n = min(CHUNK_BITS, remaining)
            writer.write(sim.generate(n))
            remaining -= n
    elapsed = time.perf_counter() - t0
    cfg.save(os.path.join(out, "config.cfg"))
    if args.raw_export:
        write_raw(read_stream(path), os.path.join(out, "raw.bin"))
    write_json({
        "command": "generate",
        "version": __version__,
        "numpy_version": np.__version__,
        "bit_count": cfg.bits,
        "file": "raw.qrbs",
        "sha256": _sha256(path),
        "calibrated": {"filter_beta": cfg.source.filter_beta,
                       "threshold_offset": cfg.source.threshold_offset,
                       "threshold_tau": cfg.source.threshold_tau},
        "config": cfg.to_items(),
        "elapsed_s": elapsed,
    }, os.path.join(out, "raw.json"))
    print(f"wrote {cfg.bits} raw bits to {path} in {elapsed:.2f} s")
    return EXIT_OK


def _read_input(path: str) -> BitStream:
    try:
        return read_stream(path)
    except (OSError, BitStreamFormatError) as exc:
        raise UsageError(f"cannot read bitstream {path}: {exc}") from exc


def cmd_analyze(args) -> int:
    from .entropy import analyze, write_analysis

    cfg = _resolve(args)
    out = _outdir(args.out)
    bits = _read_input(args.input)
    rep = analyze(bits, block_size=cfg.block_size, max_lag=cfg.max_lag,
                  orders=cfg.sv_orders, min_history_count=cfg.min_history_count,
                  hmin_ns=range(1, cfg.hmin_max_n + 1), workers=cfg.workers)
    write_analysis(rep, out)
    cfg.save(os.path.join(out, "config.cfg"))
    print(f"P0 = {rep.p0}  sigma_M = {rep.sigma_m}  sigma_T = {rep.sigma_t}")
    if rep.autocorr:
        print(f"R(1) = {rep.autocorr[0]:.5f}  (finite-size sigma {rep.autocorr_sigma:.2e})")
    for s in rep.sv:
        print(f"order {s['order']:2d}: max P = {s['max_cond_prob']:.5f}  delta = {s['delta']:.5f}")
    for err in rep.errors:
        print(f"error in {err['stage']}: {err['message']}", file=sys.stderr)
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_extract(args) -> int:
    cfg = _resolve(args)
    out = _outdir(args.out)
    matrix = _matrix(args, cfg)
    try:
        reader = BitStreamReader(args.input)
    except (OSError, BitStreamFormatError) as exc:
        raise UsageError(f"cannot read bitstream {args.input}: {exc}") from exc
    if reader.bit_count < matrix.cols:
        reader.close()
        raise UsageError(f"input has {reader.bit_count} bits, fewer than one "
                         f"{matrix.cols}-bit block")
    path = os.path.join(out, "extracted.qrbs")
    ext = StreamingExtractor(matrix, workers=cfg.workers)
    extract_stream(matrix, BitStream.from_bits(np.zeros(matrix.cols)))  # warm up kernel
    busy = 0.0
    chunk = CHUNK_BITS - CHUNK_BITS % matrix.cols
    with reader, BitStreamWriter(path) as writer:
        for piece in reader.chunks(chunk):
            t0 = time.perf_counter()
            y = ext.feed(piece)
            busy += time.perf_counter() - t0
            writer.write(y)
    write_matrix(matrix, os.path.join(out, "matrix.qrxmat"))
    cfg.save(os.path.join(out, "config.cfg"))
    if args.raw_export:
        write_raw(read_stream(path), os.path.join(out, "extracted.bin"))
    rate = ext.bits_out / busy if busy > 0 else float("inf")
    write_json({
        "command": "extract",
        "input": os.path.abspath(args.input),
        "input_bits": ext.bits_in,
        "output_bits": ext.bits_out,
        "discarded_bits": ext.discarded_bits,
        "rows": matrix.rows, "cols": matrix.cols, "matrix_seed": matrix.seed,
        "workers": cfg.workers,
        "extract_seconds": busy,
        "output_bps": rate,
        "sha256": _sha256(path),
    }, os.path.join(out, "extract.json"))
    print(f"extracted {ext.bits_out} bits ({ext.discarded_bits} trailing bits discarded), "
          f"{rate / 1e9:.3f} Gbps output")
    return EXIT_OK


def bench(matrix: ExtractionMatrix, duration: float, workers=BENCH_WORKERS,
          input_bits: int = 1 << 27, seed: int = 0) -> dict:
    """Throughput of :func:`extract_stream` on in-memory random data."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    input_bits -= input_bits % matrix.cols
    rng = np.random.default_rng(seed)
    data = BitStream._trusted(rng.integers(0, 256, (input_bits + 7) // 8, dtype=np.uint8),
                              input_bits)
    extract_stream(matrix, data[: matrix.cols * 64])  # compile and build the table
    results, digests = [], set()
    for w in workers:
        passes, elapsed = 0, 0.0
        out_bits = 0
        while elapsed < duration or passes == 0:
            t0 = time.perf_counter()
            y = extract_stream(matrix, data, workers=w)
            elapsed += time.perf_counter() - t0
            passes += 1
            out_bits += y.bit_count
        digests.add(hashlib.sha256(y.payload.tobytes()).hexdigest())
        results.append({"workers": w, "passes": passes, "seconds": elapsed,
                        "input_bps": passes * input_bits / elapsed,
                        "output_bps": out_bits / elapsed})
    return {"rows": matrix.rows, "cols": matrix.cols, "input_bits": input_bits,
            "cpu_count": os.cpu_count(), "results": results,
            "worker_invariant": len(digests) == 1}


def cmd_bench(args) -> int:
    cfg = _resolve(args)
    if not args.duration > 0:
        raise UsageError("duration must be positive")
    matrix = _matrix(args, cfg)
    workers = [w for w in BENCH_WORKERS if w <= max(cfg.workers, 8)]
    report = bench(matrix, args.duration, workers)
    for r in report["results"]:
        print(f"workers={r['workers']}: output {r['output_bps'] / 1e9:.3f} Gbps, "
              f"input {r['input_bps'] / 1e9:.3f} Gbps")
    print("outputs identical across worker counts:", report["worker_invariant"])
    if args.out:
        write_json(report, os.path.join(_outdir(args.out), "bench.json"))
    return EXIT_OK if report["worker_invariant"] else EXIT_FAIL


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    out = _outdir(args.out) if args.out else None
    return run_selftest(out, matrix_path=args.matrix)


def cmd_calibrate(args) -> int:
    from .source import _measure, calibrate

    cfg = _resolve(args)
    cal = calibrate(cfg.source, n_bits=args.trial_bits)
    p0, r1 = _measure(cal, cfg.bits)
    fitted = cfg.replace(filter_beta=cal.filter_beta, threshold_offset=cal.threshold_offset)
    print(f"filter_beta = {cal.filter_beta!r}\nthreshold_offset = {cal.threshold_offset!r}")
    print(f"check run of {cfg.bits} bits: P0 = {p0:.5f}, R(1) = {r1:.5f}")
    if args.out:
        fitted.save(os.path.join(_outdir(args.out), "calibrated.cfg"))
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--bits", type=int, metavar="N", help="run length in bits")
    common.add_argument("--seed", type=int, metavar="N",
                        help="source seed for generate, matrix seed otherwise")
    common.add_argument("--matrix", metavar="PATH", help="QRXMAT01 matrix file")
    common.add_argument("--rows", type=int, metavar="N", help="output bits per block")
    common.add_argument("--cols", type=int, metavar="N", help="input bits per block")
    common.add_argument("--workers", type=int, metavar="N", help="parallel workers")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory")
    common.add_argument("--raw-export", action="store_true",
                        help="also write a headerless payload for external test suites")

    parser = argparse.ArgumentParser(prog="qrng-twin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate a raw bitstream")
    p = sub.add_parser("analyze", parents=[common], help="entropy analysis of a stream")
    p.add_argument("input")
    p = sub.add_parser("extract", parents=[common], help="run the GF(2) extractor")
    p.add_argument("input")
    p = sub.add_parser("bench", parents=[common], help="extractor throughput")
    p.add_argument("--duration", type=float, default=2.0, metavar="SECONDS")
    sub.add_parser("selftest", parents=[common], help="run the built-in property suite")
    p = sub.add_parser("calibrate", parents=[common],
                       help="fit filter_beta and threshold_offset to the targets")
    p.add_argument("--trial-bits", type=int, default=10**7)
    return parser


COMMANDS = {"generate": cmd_generate, "analyze": cmd_analyze, "extract": cmd_extract,
            "bench": cmd_bench, "selftest": cmd_selftest, "calibrate": cmd_calibrate}
DEFAULT_OUT = {"generate": "out", "analyze": "out/analysis", "extract": "out/extracted",
               "calibrate": None, "bench": None, "selftest": None}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.out is None:
        args.out = DEFAULT_OUT[args.command]
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, MatrixConfigError) as exc:
        print(f"qrng-twin {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
