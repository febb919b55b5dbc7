"""
Rate Limit Handler

Client-side pacing of AA requests. The handler mirrors the AA's per-seed
buckets from the limits the AA publishes under /keys, so a well-behaved
client never hits a 429, and it honours Retry-After when one arrives anyway.
"""

import time
from typing import Any, Callable, Dict, Optional

from .exceptions import RateLimitedError
from .token_bucket import TokenBucket

# Longest wait the handler sleeps through before giving up
MAX_WAIT_S = 3600.0


class RateLimitHandler:
    """Paces site and relay issuance requests against one AA"""

    def __init__(
        self,
        limits: Optional[Dict[str, float]] = None,
        clock: Callable[[], float] = time.time,
        sleep: Callable[[float], None] = time.sleep,
        max_wait_s: float = MAX_WAIT_S,
    ) -> None:
        """
        Initialize rate limit handler

        Args:
            limits: site_r, relay_q and interval_s as published by the AA
                (no pacing until configured)
            clock: Time source
            sleep: Sleep function
            max_wait_s: Waits longer than this raise instead of sleeping
        """
        self.clock = clock
        self.sleep = sleep
        self.max_wait_s = max_wait_s
        self.buckets: Dict[str, TokenBucket] = {}
        self.blocked_until: Dict[str, float] = {}
        if limits:
            self.configure(limits)

    def configure(self, limits: Dict[str, float]) -> None:
        """
        Set up one bucket per limiter from published limits

        Buckets start full with one interval's worth, like a fresh seed at the AA.
        """
        now = self.clock()
        interval = float(limits.get("interval_s", 600))
        for name, key in (("site", "site_r"), ("relay", "relay_q")):
            if key in limits:
                per_interval = float(limits[key])
                self.buckets[name] = TokenBucket.for_interval(
                    per_interval, interval, interval, now
                )

    def get_wait_time(self, bucket: str) -> float:
        """
        Get required wait time before the next request on bucket

        Returns:
            Wait time in seconds
        """
        now = self.clock()
        wait = max(0.0, self.blocked_until.get(bucket, 0.0) - now)
        limiter = self.buckets.get(bucket)
        if limiter is not None:
            wait = max(wait, limiter.retry_after(now))
        return wait

    def should_wait(self, bucket: str) -> bool:
        return self.get_wait_time(bucket) > 0

    def wait_if_needed(self, bucket: str, block: bool = True) -> None:
        """
        Wait for a token on bucket, then take it

        Args:
            bucket: "site" or "relay"
            block: Sleep when a wait is needed; raise otherwise

        Raises:
            RateLimitedError: Not blocking, or the wait exceeds max_wait_s
        """
        wait = self.get_wait_time(bucket)
        if wait > 0:
            if not block or wait > self.max_wait_s:
                raise RateLimitedError(
                    f"Client-side {bucket} limit reached", retry_after=wait, bucket=bucket
                )
            self.sleep(wait)
        limiter = self.buckets.get(bucket)
        if limiter is not None:
            limiter.try_consume(self.clock())

    def update_from_response(self, response: Any, bucket: str) -> None:
        """
        Record a Retry-After from a 429 response

        Args:
            response: HTTP response object
            bucket: Bucket the request drew on
        """
        if getattr(response, "status_code", None) != 429:
            return
        retry_after = self._get_header_float(response, "Retry-After") or 1.0
        self.blocked_until[bucket] = self.clock() + retry_after
        limiter = self.buckets.get(bucket)
        if limiter is not None:
            # the server is the authority; assume our mirror is empty
            limiter.tokens = 0.0
            limiter.updated_at = self.clock()

    def get_status(self) -> dict:
        """
        Get current limiter status

        Returns:
            Dictionary containing per-bucket levels and waits
        """
        now = self.clock()
        return {
            name: {
                "tokens": limiter.peek(now),
                "capacity": limiter.capacity,
                "wait_time": self.get_wait_time(name),
            }
            for name, limiter in self.buckets.items()
        }

    def _get_header_float(self, response: Any, header_name: str) -> Optional[float]:
        try:
            value = response.headers.get(header_name)
            return float(value) if value else None
        except (ValueError, AttributeError):
            return None
