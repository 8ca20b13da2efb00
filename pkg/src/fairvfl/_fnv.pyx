# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled FNV-1a kernel for transcript payload digests.

Hashing every exchanged payload is the one byte-serial hot loop in a
training run (gigabytes per full run), so it gets a C inner loop. The
pure-Python twin lives in ``_fnv_py``.
"""

from libc.stdint cimport uint64_t

DEF FNV64_OFFSET = 0xcbf29ce484222325
DEF FNV64_PRIME = 0x100000001b3


def fnv1a64(const unsigned char[::1] data, seed=None):
    """64-bit FNV-1a over ``data``, optionally chained from ``seed``."""
    cdef uint64_t h = FNV64_OFFSET if seed is None else <uint64_t> seed
    cdef Py_ssize_t i
    cdef Py_ssize_t n = data.shape[0]
    for i in range(n):
        h = (h ^ <uint64_t> data[i]) * <uint64_t> FNV64_PRIME
    return h
