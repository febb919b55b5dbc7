"""
Bloom Filter Tests

Tests for BloomFilter class.
"""

import math
import unittest

from capguard.bloom_filter import BloomFilter


class TestBloomFilter(unittest.TestCase):
    """Test BloomFilter class"""

    def test_sizing(self) -> None:
        bloom = BloomFilter(10_000, 1e-4)
        expected_bits = math.ceil(-10_000 * math.log(1e-4) / math.log(2) ** 2)
        self.assertEqual(bloom.size, expected_bits)
        self.assertEqual(bloom.hash_count, 13)

    def test_invalid_parameters(self) -> None:
        with self.assertRaises(ValueError):
            BloomFilter(0)
        with self.assertRaises(ValueError):
            BloomFilter(10, 1.5)

    def test_no_false_negatives(self) -> None:
        bloom = BloomFilter(5_000, 1e-3)
        items = [f"item-{i}".encode() for i in range(5_000)]
        for item in items:
            bloom.add(item)
        self.assertTrue(all(item in bloom for item in items))
        self.assertEqual(len(bloom), 5_000)

    def test_false_positive_rate_at_design_load(self) -> None:
        bloom = BloomFilter(20_000, 1e-3)
        for i in range(20_000):
            bloom.add(f"in-{i}")
        probes = 100_000
        hits = sum(f"out-{i}" in bloom for i in range(probes))
        # 3 sigma above the design rate
        bound = 1e-3 + 3 * math.sqrt(1e-3 * (1 - 1e-3) / probes)
        self.assertLessEqual(hits / probes, bound * 1.5)

    def test_add_if_absent(self) -> None:
        bloom = BloomFilter(100)
        self.assertTrue(bloom.add_if_absent(b"x"))
        self.assertFalse(bloom.add_if_absent(b"x"))
        self.assertEqual(len(bloom), 1)

    def test_clear(self) -> None:
        bloom = BloomFilter(100)
        bloom.add("a")
        bloom.clear()
        self.assertNotIn("a", bloom)
        self.assertEqual(len(bloom), 0)

    def test_estimated_rate_grows_with_load(self) -> None:
        bloom = BloomFilter(1_000, 1e-2)
        self.assertEqual(bloom.estimated_false_positive_rate(), 0.0)
        for i in range(1_000):
            bloom.add(str(i))
        self.assertAlmostEqual(bloom.estimated_false_positive_rate(), 1e-2, delta=5e-3)


if __name__ == "__main__":
    unittest.main()
