"""
Token Bucket

Refilling bucket used for the AA's per-seed limiters, the client-side pacing
limiter and the scheduler's rate_limit strategy. Time is always passed in so
buckets can be persisted and replayed.
"""

from dataclasses import dataclass
from typing import Dict


@dataclass
class TokenBucket:
    """
    Token bucket with continuous refill

    Attributes:
        capacity: Maximum number of tokens
        rate: Refill rate in tokens per second
        tokens: Current level
        updated_at: Time of the last refill
    """

    capacity: float
    rate: float
    tokens: float
    updated_at: float

    @classmethod
    def full(cls, capacity: float, rate: float, now: float) -> "TokenBucket":
        return cls(capacity=capacity, rate=rate, tokens=capacity, updated_at=now)

    @classmethod
    def for_interval(
        cls, per_interval: float, interval_s: float, burst_window_s: float, now: float
    ) -> "TokenBucket":
        """
        Bucket refilling at per_interval tokens every interval_s

        Capacity is rate times the burst window.

        Args:
            per_interval: Tokens granted per interval (r_i or q_i)
            interval_s: Interval length in seconds
            burst_window_s: Window the capacity covers
            now: Creation time

        Returns:
            Full TokenBucket
        """
        rate = per_interval / interval_s
        return cls.full(rate * burst_window_s, rate, now)

    def refill(self, now: float) -> None:
        # Clock steps backwards are ignored so the level never decreases on refill
        if now > self.updated_at:
            self.tokens = min(self.capacity, self.tokens + (now - self.updated_at) * self.rate)
            self.updated_at = now

    def peek(self, now: float) -> float:
        """Level at time now without mutating the bucket"""
        if now <= self.updated_at:
            return self.tokens
        return min(self.capacity, self.tokens + (now - self.updated_at) * self.rate)

    def try_consume(self, now: float, amount: float = 1.0) -> bool:
        """
        Take amount tokens if available

        Returns:
            True if the tokens were taken
        """
        self.refill(now)
        # tolerance for float accumulation in long refills
        if self.tokens + 1e-9 >= amount:
            self.tokens = max(0.0, self.tokens - amount)
            return True
        return False

    def retry_after(self, now: float, amount: float = 1.0) -> float:
        """Seconds until amount tokens are available"""
        level = self.peek(now)
        if level >= amount:
            return 0.0
        if self.rate <= 0:
            return float("inf")
        return (amount - level) / self.rate

    def reserve(self, now: float, amount: float = 1.0) -> float:
        """
        Book amount tokens, going into debt if needed

        Successive reservations are served in booking order, each one
        after the debt ahead of it has refilled.

        Returns:
            Seconds from now until the booked tokens are covered
        """
        self.refill(now)
        self.tokens -= amount
        if self.tokens >= -1e-9:
            return 0.0
        if self.rate <= 0:
            return float("inf")
        return -self.tokens / self.rate

    def to_dict(self) -> Dict[str, float]:
        return {
            "capacity": self.capacity,
            "rate": self.rate,
            "tokens": self.tokens,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "TokenBucket":
        return cls(
            capacity=float(data["capacity"]),
            rate=float(data["rate"]),
            tokens=float(data["tokens"]),
            updated_at=float(data["updated_at"]),
        )
