"""Throughput comparison of the transcript digest kernels.

A full training run hashes every exchanged payload (gigabytes of little-endian
floats), so the digest is the one byte-serial hot loop in the pipeline. This
prints MB/s for the compiled kernel and the pure-Python fallback, plus the
projected hashing time for a full-scale training run.

Usage: python3 benchmarks/bench_digest.py [--sizes 1024,65536,1048576]
"""

import argparse
import time

import numpy as np

from fairvfl import digest
from fairvfl._fnv_py import fnv1a64 as pure_fnv1a64

try:
    from fairvfl._fnv import fnv1a64 as compiled_fnv1a64
except ImportError:
    compiled_fnv1a64 = None

# one round of the default setup: ~115k floats of reps and gradients
FULL_RUN_BYTES = 115_000 * 8 * 5630  # floats/round * bytes * rounds (10 epochs)


def throughput(fn, buf: bytes, min_time: float = 0.3) -> float:
    """MB/s over repeated calls until min_time elapses."""
    fn(buf)  # warm up
    n, t0 = 0, time.perf_counter()
    while time.perf_counter() - t0 < min_time:
        fn(buf)
        n += 1
    elapsed = time.perf_counter() - t0
    return len(buf) * n / elapsed / 1e6


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="1024,65536,1048576",
                        help="comma-separated buffer sizes in bytes")
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    rng = np.random.default_rng(0)
    print(f"selected kernel at import: {'compiled' if digest.HAVE_COMPILED_FNV else 'pure'}")
    print(f"{'size':>10}  {'pure MB/s':>12}  {'compiled MB/s':>14}  {'speedup':>8}")
    rates = {}
    for size in sizes:
        buf = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
        pure = throughput(pure_fnv1a64, buf)
        if compiled_fnv1a64 is not None:
            comp = throughput(compiled_fnv1a64, buf)
            assert compiled_fnv1a64(buf) == pure_fnv1a64(buf)
            print(f"{size:>10}  {pure:>12.2f}  {comp:>14.2f}  {comp / pure:>7.1f}x")
        else:
            comp = None
            print(f"{size:>10}  {pure:>12.2f}  {'(not built)':>14}  {'':>8}")
        rates[size] = (pure, comp)

    pure, comp = rates[max(sizes)]
    print(f"\nprojected payload-hashing time for a full-scale run "
          f"({FULL_RUN_BYTES / 1e9:.1f} GB):")
    print(f"  pure Python: {FULL_RUN_BYTES / (pure * 1e6):8.0f} s")
    if comp:
        print(f"  compiled:    {FULL_RUN_BYTES / (comp * 1e6):8.1f} s")


if __name__ == "__main__":
    main()
