"""FNV-1a digest kernels: reference vectors, compiled/pure agreement, and the
array byte-order contract."""

import numpy as np
import pytest

from fairvfl import digest
from fairvfl._fnv_py import fnv1a64 as pure_fnv1a64

# canonical FNV-1a 64-bit vectors
VECTORS = [
    (b"", 0xCBF29CE484222325),
    (b"a", 0xAF63DC4C8601EC8C),
    (b"foobar", 0x85944171F73967E8),
]


@pytest.mark.parametrize("data,expected", VECTORS)
def test_reference_vectors(data, expected):
    assert digest.digest_bytes(data) == expected
    assert pure_fnv1a64(data) == expected


def test_pure_matches_selected_kernel():
    rng = np.random.default_rng(0)
    for n in (0, 1, 7, 63, 1024, 100_000):
        buf = rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()
        assert digest.digest_bytes(buf) == pure_fnv1a64(buf)


def test_seed_chaining_equals_concatenation():
    a, b = b"hello ", b"world"
    chained = digest.fnv1a64(b, seed=digest.fnv1a64(a))
    assert chained == digest.fnv1a64(a + b)


def test_array_digest_is_little_endian_and_order_insensitive():
    arr = np.arange(12, dtype="<f8").reshape(3, 4)
    expected = digest.digest_bytes(arr.tobytes())
    assert digest.digest_array(arr) == expected
    assert digest.digest_array(arr.astype(">f8")) == expected  # host-order independent
    assert digest.digest_array(np.asfortranarray(arr)) == expected  # layout independent


def test_distinct_payloads_distinct_digests():
    a = np.zeros(16)
    b = a.copy()
    b[7] = 1e-300
    assert digest.digest_array(a) != digest.digest_array(b)
