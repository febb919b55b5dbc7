"""
Benchmark Tests

Tests for blind-signature step timings.
"""

import itertools
import unittest

from capguard.benchmark import OPERATIONS, BenchmarkResult, run_benchmark


class TestBenchmark(unittest.TestCase):
    """Test run_benchmark and BenchmarkResult"""

    def test_fake_clock(self) -> None:
        ticks = itertools.count()
        result = run_benchmark(bits=1024, samples=3, keygen_samples=1, clock=lambda: next(ticks))
        self.assertEqual(set(result.medians_s), set(OPERATIONS))
        self.assertTrue(all(v == 1.0 for v in result.medians_s.values()))
        self.assertFalse(result.ordering_holds)
        data = result.to_dict()
        self.assertEqual(data["samples"], 3)
        self.assertEqual(data["median_us"]["sign"], 1e6)

    def test_signing_dominates(self) -> None:
        result = run_benchmark(bits=1024, samples=30, keygen_samples=1)
        self.assertTrue(result.ordering_holds, result.to_dict())
        self.assertGreater(result.medians_s["keygen"], result.medians_s["sign"])

    def test_ordering(self) -> None:
        fast = dict.fromkeys(OPERATIONS, 1.0)
        self.assertTrue(BenchmarkResult(1024, 1, dict(fast, sign=3.0)).ordering_holds)
        self.assertFalse(BenchmarkResult(1024, 1, dict(fast, sign=2.0)).ordering_holds)


if __name__ == "__main__":
    unittest.main()
