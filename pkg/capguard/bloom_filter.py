"""
Bloom Filter

Bit-array membership filter with MurmurHash3 double hashing. Sized from the
expected number of insertions E and a target false-positive rate f:
m = -E ln f / (ln 2)^2 bits and k = (m / E) ln 2 hash functions.
"""

import math
import threading
from typing import Union

import mmh3
from bitarray import bitarray

_MASK64 = (1 << 64) - 1


class BloomFilter:
    """Probabilistic set without false negatives"""

    def __init__(self, expected_items: int, false_positive_rate: float = 1e-4) -> None:
        """
        Initialize Bloom filter

        Args:
            expected_items: Design load E
            false_positive_rate: Target f at design load
        """
        if expected_items <= 0:
            raise ValueError("expected_items must be positive")
        if not 0 < false_positive_rate < 1:
            raise ValueError("false_positive_rate must lie in (0, 1)")
        self.expected_items = expected_items
        self.false_positive_rate = false_positive_rate
        self.size = max(
            8, math.ceil(-expected_items * math.log(false_positive_rate) / math.log(2) ** 2)
        )
        self.hash_count = max(1, round(self.size / expected_items * math.log(2)))
        self.bit_array = bitarray(self.size)
        self.bit_array.setall(0)
        self.count = 0
        self._lock = threading.Lock()

    def _indexes(self, item: Union[bytes, str]) -> list:
        data = item.encode("utf-8") if isinstance(item, str) else item
        value = mmh3.hash128(data, signed=False)
        h1 = value & _MASK64
        h2 = (value >> 64) | 1
        return [(h1 + i * h2) % self.size for i in range(self.hash_count)]

    def add(self, item: Union[bytes, str]) -> None:
        with self._lock:
            for index in self._indexes(item):
                self.bit_array[index] = 1
            self.count += 1

    def add_if_absent(self, item: Union[bytes, str]) -> bool:
        """
        Insert item unless it already tests present; check and insert are atomic

        Returns:
            True if the item was inserted
        """
        indexes = self._indexes(item)
        with self._lock:
            if all(self.bit_array[i] for i in indexes):
                return False
            for index in indexes:
                self.bit_array[index] = 1
            self.count += 1
            return True

    def __contains__(self, item: Union[bytes, str]) -> bool:
        return all(self.bit_array[i] for i in self._indexes(item))

    def __len__(self) -> int:
        return self.count

    def clear(self) -> None:
        with self._lock:
            self.bit_array.setall(0)
            self.count = 0

    def estimated_false_positive_rate(self) -> float:
        """(1 - e^(-k n / m))^k at the current insertion count"""
        return (1 - math.exp(-self.hash_count * self.count / self.size)) ** self.hash_count
