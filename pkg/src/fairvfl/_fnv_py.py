"""Pure-Python FNV-1a digest, the fallback when the compiled kernel is absent.

Byte-serial by construction (each step chains through the previous hash), so
this is orders of magnitude slower than the C twin; fine for short payloads
and for cross-checking the compiled kernel.
"""

_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data, seed=None):
    """64-bit FNV-1a over ``data`` (bytes-like), optionally chained from ``seed``."""
    h = _FNV64_OFFSET if seed is None else seed & _MASK64
    prime = _FNV64_PRIME
    for b in bytes(data):
        h = ((h ^ b) * prime) & _MASK64
    return h
