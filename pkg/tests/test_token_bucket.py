"""
Token Bucket Tests

Tests for TokenBucket class.
"""

import math
import unittest

from capguard.token_bucket import TokenBucket


class TestTokenBucket(unittest.TestCase):
    """Test TokenBucket class"""

    def setUp(self) -> None:
        """Test setup"""
        # 24 tokens per 600 s, one-hour burst window
        self.bucket = TokenBucket.for_interval(24, 600, 3600, now=0.0)

    def test_for_interval(self) -> None:
        self.assertAlmostEqual(self.bucket.rate, 0.04)
        self.assertAlmostEqual(self.bucket.capacity, 144)
        self.assertAlmostEqual(self.bucket.tokens, 144)

    def test_try_consume_until_empty(self) -> None:
        taken = sum(self.bucket.try_consume(0.0) for _ in range(200))
        self.assertEqual(taken, 144)
        self.assertFalse(self.bucket.try_consume(0.0))

    def test_refill_caps_at_capacity(self) -> None:
        self.bucket.try_consume(0.0, 10)
        self.bucket.refill(1e6)
        self.assertAlmostEqual(self.bucket.tokens, self.bucket.capacity)

    def test_clock_going_backwards_is_ignored(self) -> None:
        self.bucket.try_consume(100.0, 50)
        level = self.bucket.tokens
        self.bucket.refill(50.0)
        self.assertEqual(self.bucket.tokens, level)

    def test_retry_after(self) -> None:
        bucket = TokenBucket.full(1, 0.5, now=0.0)
        self.assertEqual(bucket.retry_after(0.0), 0.0)
        bucket.try_consume(0.0)
        self.assertAlmostEqual(bucket.retry_after(0.0), 2.0)
        self.assertAlmostEqual(bucket.retry_after(1.0), 1.0)

    def test_window_of_one_interval(self) -> None:
        # 24 per 600 s with a 600 s window: the 25th request waits 25 s
        bucket = TokenBucket.for_interval(24, 600, 600, now=0.0)
        self.assertAlmostEqual(bucket.capacity, 24)
        for _ in range(24):
            self.assertTrue(bucket.try_consume(0.0))
        self.assertFalse(bucket.try_consume(0.0))
        self.assertAlmostEqual(bucket.retry_after(0.0), 25.0)
        self.assertFalse(bucket.try_consume(24.9))
        self.assertTrue(bucket.try_consume(25.0))
        self.assertFalse(bucket.try_consume(25.0))

    def test_retry_after_without_refill(self) -> None:
        bucket = TokenBucket(capacity=1, rate=0, tokens=0, updated_at=0)
        self.assertTrue(math.isinf(bucket.retry_after(10.0)))

    def test_peek_does_not_mutate(self) -> None:
        self.bucket.try_consume(0.0, 44)
        self.assertAlmostEqual(self.bucket.peek(100.0), 104)
        self.assertAlmostEqual(self.bucket.tokens, 100)

    def test_reserve_books_in_order(self) -> None:
        bucket = TokenBucket(capacity=2, rate=1.0, tokens=1.0, updated_at=0.0)
        self.assertEqual(bucket.reserve(0.0), 0.0)
        self.assertAlmostEqual(bucket.reserve(0.0), 1.0)
        self.assertAlmostEqual(bucket.reserve(0.0), 2.0)
        # debt is paid back before the next booking is covered
        self.assertAlmostEqual(bucket.reserve(1.5), 1.5)

    def test_reserve_with_zero_rate(self) -> None:
        bucket = TokenBucket(capacity=1, rate=0.0, tokens=0.0, updated_at=0.0)
        self.assertTrue(math.isinf(bucket.reserve(0.0)))

    def test_dict_round_trip(self) -> None:
        self.bucket.try_consume(5.0, 3)
        restored = TokenBucket.from_dict(self.bucket.to_dict())
        self.assertEqual(restored, self.bucket)


if __name__ == "__main__":
    unittest.main()
