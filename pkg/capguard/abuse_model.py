"""
Abuse Model

Circuit demand of legitimate clients and bots. Daily user counts are
turned into unique clients per interval with the turnover ratio rho:

    N1 = N1_daily / rho
    N2 = (N2_daily - N1_daily) / rho
    arrival_rate = (N1 * r1 + N2 * r2) / t0

N2_daily is the total daily user count while a botnet is active, so the
bots are the users above the legitimate baseline.
"""

from dataclasses import asdict, dataclass, replace
from datetime import date, timedelta
from typing import Any, Dict, List, Tuple

import numpy as np

from .exceptions import ConfigError

DEFAULT_INTERVAL_S = 600.0

# Directly connecting users per day, September 2013 (knots for interpolation)
_SEPTEMBER_2013_KNOTS: List[Tuple[int, float]] = [
    (1, 2_400_000),
    (4, 4_000_000),
    (8, 5_200_000),
    (15, 5_800_000),
    (22, 5_500_000),
    (30, 5_000_000),
]


@dataclass(frozen=True)
class AbuseModel:
    """
    Attributes:
        n1_daily: Legitimate users per day
        n2_daily: All users per day while the botnet is active
        rho: Turnover ratio (daily users over unique users per interval)
        r1: Circuits per legitimate client per interval
        r2: Circuits per bot per interval
        t0: Interval length in seconds
    """

    n1_daily: float = 1_000_000
    n2_daily: float = 5_000_000
    rho: float = 2.5
    r1: float = 4.0
    r2: float = 150.0
    t0: float = DEFAULT_INTERVAL_S

    def __post_init__(self) -> None:
        if self.rho <= 0 or self.t0 <= 0:
            raise ConfigError("rho and t0 must be positive")
        if min(self.n1_daily, self.n2_daily, self.r1, self.r2) < 0:
            raise ConfigError("Client counts and circuit rates cannot be negative")

    @classmethod
    def from_interval_counts(
        cls,
        n1: float,
        n2: float,
        r1: float = 4.0,
        r2: float = 150.0,
        rho: float = 2.5,
        t0: float = DEFAULT_INTERVAL_S,
    ) -> "AbuseModel":
        """Model with given unique clients per interval"""
        n1_daily = n1 * rho
        return cls(n1_daily, n1_daily + n2 * rho, rho, r1, r2, t0)

    @property
    def n1(self) -> float:
        return self.n1_daily / self.rho

    @property
    def n2(self) -> float:
        return max(0.0, self.n2_daily - self.n1_daily) / self.rho

    @property
    def arrival_rate(self) -> float:
        """Circuit demand per second, retries excluded"""
        return (self.n1 * self.r1 + self.n2 * self.r2) / self.t0

    def scaled(self, factor: float) -> "AbuseModel":
        """Same per-client behaviour with factor times fewer clients"""
        if factor <= 0:
            raise ConfigError("Scale factor must be positive")
        return replace(self, n1_daily=self.n1_daily / factor, n2_daily=self.n2_daily / factor)

    def with_bot_rate(self, r2: float) -> "AbuseModel":
        return replace(self, r2=r2)

    def to_dict(self) -> Dict[str, float]:
        data = asdict(self)
        data.update(n1=self.n1, n2=self.n2, arrival_rate=self.arrival_rate)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AbuseModel":
        """
        Build from a scenario mapping

        Accepts either daily counts (n1_daily, n2_daily) or unique clients
        per interval (n1, n2).

        Raises:
            ConfigError: Unknown keys or non-numeric values
        """
        known = {"n1_daily", "n2_daily", "n1", "n2", "rho", "r1", "r2", "t0"}
        unknown = set(data) - known - {"arrival_rate"}
        if unknown:
            raise ConfigError(f"Unknown abuse model keys: {', '.join(sorted(unknown))}")
        try:
            values = {k: float(v) for k, v in data.items() if k in known}
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Abuse model values must be numbers: {e}") from e
        if "n1_daily" not in values and "n1" in values:
            return cls.from_interval_counts(
                values["n1"],
                values.get("n2", 0.0),
                r1=values.get("r1", 4.0),
                r2=values.get("r2", 150.0),
                rho=values.get("rho", 2.5),
                t0=values.get("t0", DEFAULT_INTERVAL_S),
            )
        values.pop("n1", None)
        values.pop("n2", None)
        return cls(**values)


def september_2013(
    n1_daily: float = 1_000_000,
    rho: float = 2.5,
    r1: float = 4.0,
    r2: float = 150.0,
    t0: float = DEFAULT_INTERVAL_S,
) -> List[Tuple[date, AbuseModel]]:
    """
    One abuse model per day of September 2013

    Daily totals follow a piecewise-linear trace of the botnet surge; the
    legitimate baseline stays at n1_daily.
    """
    days = np.arange(1, 31)
    knots_x = [d for d, _ in _SEPTEMBER_2013_KNOTS]
    knots_y = [u for _, u in _SEPTEMBER_2013_KNOTS]
    totals = np.interp(days, knots_x, knots_y)
    start = date(2013, 9, 1)
    return [
        (
            start + timedelta(days=int(d) - 1),
            AbuseModel(n1_daily, float(max(total, n1_daily)), rho, r1, r2, t0),
        )
        for d, total in zip(days, totals)
    ]
