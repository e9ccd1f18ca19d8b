"""Bloom filter sized from (capacity, false-positive rate) and n-gram extraction."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import mmh3
import numpy as np

CANONICAL_CAPACITY = 1_000_000
CANONICAL_FP_RATE = 0.01
# Rounding k = (m/n) ln 2 at the canonical point gives 7; the reference setup uses 6.
CANONICAL_HASH_COUNT = 6


def bloom_params(n: int, p: float) -> tuple[int, int]:
    """Return ``(m, k)``: bit count and hash-function count.

    ``m = ceil(-n ln p / (ln 2)^2)`` and ``k = round((m / n) ln 2)``, at least 1.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"capacity must be a positive integer, got {n!r}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"false-positive rate must be in (0, 1), got {p!r}")
    m = math.ceil(-n * math.log(p) / math.log(2) ** 2)
    if n == CANONICAL_CAPACITY and p == CANONICAL_FP_RATE:
        return m, CANONICAL_HASH_COUNT
    k = max(1, int(math.floor(m / n * math.log(2) + 0.5)))
    return m, k


def ngrams(data: bytes, size: int = 4, stride: int = 1) -> list[bytes]:
    """Sliding byte windows of ``size`` taken every ``stride`` bytes."""
    if size < 1 or stride < 1:
        raise ValueError("size and stride must be positive")
    return [data[i : i + size] for i in range(0, len(data) - size + 1, stride)]


def hash_pair(gram: bytes) -> tuple[int, int]:
    return mmh3.hash(gram, 0, signed=False), mmh3.hash(gram, 1, signed=False)


def hash_pairs(grams: Iterable[bytes]) -> np.ndarray:
    """Two 32-bit Murmur3 digests per gram as an ``(n, 2)`` uint64 array."""
    rows = [hash_pair(g) for g in grams]
    if not rows:
        return np.empty((0, 2), dtype=np.uint64)
    return np.asarray(rows, dtype=np.uint64)


class BloomFilter:
    """Bit-packed Bloom filter with ``k`` functions from double hashing.

    Index ``j`` of a gram is ``(h1 + j * h2) mod m`` where ``h1`` and ``h2``
    are Murmur3 digests under seeds 0 and 1.

    >>> bf = BloomFilter(1000, 0.01)
    >>> bf.add(b"ABCD")
    >>> b"ABCD" in bf
    True
    """

    def __init__(self, n_capacity: int = CANONICAL_CAPACITY, p_target: float = CANONICAL_FP_RATE):
        self.n_capacity = n_capacity
        self.p_target = p_target
        self.m, self.k = bloom_params(n_capacity, p_target)
        self.bits = np.zeros((self.m + 7) // 8, dtype=np.uint8)
        self._steps = np.arange(self.k, dtype=np.uint64)

    def _indices(self, pairs: np.ndarray) -> np.ndarray:
        # uint64 cannot overflow: h1 + (k-1)*h2 < 2**32 * k
        return (pairs[:, :1] + self._steps[None, :] * pairs[:, 1:2]) % np.uint64(self.m)

    def add_hashes(self, pairs: np.ndarray) -> None:
        if len(pairs) == 0:
            return
        idx = self._indices(pairs).ravel()
        np.bitwise_or.at(self.bits, idx >> np.uint64(3), (1 << (idx & np.uint64(7))).astype(np.uint8))

    def contains_hashes(self, pairs: np.ndarray) -> np.ndarray:
        """Boolean membership for each row of ``pairs``."""
        if len(pairs) == 0:
            return np.zeros(0, dtype=bool)
        idx = self._indices(pairs)
        hit = (self.bits[idx >> np.uint64(3)] >> (idx & np.uint64(7)).astype(np.uint8)) & 1
        return hit.all(axis=1)

    def add(self, gram: bytes) -> None:
        self.add_hashes(np.asarray([hash_pair(gram)], dtype=np.uint64))

    def update(self, grams: Iterable[bytes]) -> None:
        self.add_hashes(hash_pairs(grams))

    def __contains__(self, gram: bytes) -> bool:
        return bool(self.contains_hashes(np.asarray([hash_pair(gram)], dtype=np.uint64))[0])

    def contained_fraction(self, pairs: np.ndarray) -> float:
        if len(pairs) == 0:
            return 0.0
        return float(self.contains_hashes(pairs).mean())

    def __repr__(self) -> str:
        return f"BloomFilter(n_capacity={self.n_capacity}, p_target={self.p_target}, m={self.m}, k={self.k})"


def bloom_insert(filter: BloomFilter, gram: bytes) -> BloomFilter:
    filter.add(gram)
    return filter


def bloom_contains(filter: BloomFilter, gram: bytes) -> bool:
    return gram in filter


def count_words(data: bytes, size: int = 4) -> int:
    """Number of non-overlapping ``size``-byte sequences in ``data``."""
    return len(data) // size


def gram_set(data: bytes, size: int = 4) -> frozenset:
    return frozenset(ngrams(data, size, 1))


def containment(needle: Sequence[bytes] | frozenset, haystack: frozenset) -> float:
    """Fraction of the distinct grams of ``needle`` present in ``haystack``."""
    needle = needle if isinstance(needle, frozenset) else frozenset(needle)
    if not needle:
        return 0.0
    return len(needle & haystack) / len(needle)
