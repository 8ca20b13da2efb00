"""Payload digests: 64-bit FNV-1a over little-endian payload bytes.

Selects the compiled kernel at import when available and falls back to the
pure-Python implementation otherwise. ``benchmarks/bench_digest.py`` compares
the two.
"""

from __future__ import annotations

import numpy as np

try:
    from fairvfl._fnv import fnv1a64

    HAVE_COMPILED_FNV = True
except ImportError:  # pragma: no cover - depends on how the package was built
    from fairvfl._fnv_py import fnv1a64

    HAVE_COMPILED_FNV = False

FNV64_OFFSET = 0xCBF29CE484222325


def digest_bytes(data: bytes) -> int:
    return fnv1a64(data)


def digest_array(arr: np.ndarray) -> int:
    """Digest of an array's little-endian buffer, independent of host order."""
    le = np.ascontiguousarray(arr)
    if le.dtype.byteorder == ">":
        le = le.astype(le.dtype.newbyteorder("<"))
    return fnv1a64(le.tobytes())


def digest_text(text: str) -> int:
    return fnv1a64(text.encode("utf-8"))
