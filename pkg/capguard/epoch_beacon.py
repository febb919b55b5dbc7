"""
Epoch Beacon

Mock stand-in for the network's daily shared random value. Every party that
knows the beacon secret derives the same 256-bit value for an epoch, and
tokens bound to an older value are nullified once the epoch rolls over.
"""

import hashlib
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional

from .tokens import EPOCH_LEN


@dataclass(frozen=True)
class Epoch:
    """One beacon period"""

    index: int
    value: bytes
    starts_at: int
    ends_at: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "index": self.index,
            "value": self.value.hex(),
            "starts_at": self.starts_at,
            "ends_at": self.ends_at,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "Epoch":
        value = bytes.fromhex(str(data["value"]))
        if len(value) != EPOCH_LEN:
            raise ValueError(f"Epoch value must be {EPOCH_LEN} bytes")
        return cls(
            index=int(data["index"]),  # type: ignore[call-overload]
            value=value,
            starts_at=int(data["starts_at"]),  # type: ignore[call-overload]
            ends_at=int(data["ends_at"]),  # type: ignore[call-overload]
        )


class EpochBeacon:
    """Derives epoch values from a shared secret and a clock"""

    def __init__(
        self,
        secret: str,
        length_s: int = 86400,
        clock: Optional[Callable[[], float]] = None,
    ) -> None:
        """
        Initialize epoch beacon

        Args:
            secret: Shared beacon secret
            length_s: Epoch length in seconds
            clock: Time source, defaults to time.time
        """
        if length_s <= 0:
            raise ValueError("Epoch length must be positive")
        self.secret = secret.encode("utf-8")
        self.length_s = length_s
        self.clock = clock or time.time

    def index_at(self, now: float) -> int:
        return int(now // self.length_s)

    def value_for(self, index: int) -> bytes:
        return hashlib.sha256(self.secret + index.to_bytes(8, "big", signed=True)).digest()

    def epoch_at(self, now: float) -> Epoch:
        index = self.index_at(now)
        start = index * self.length_s
        return Epoch(index, self.value_for(index), start, start + self.length_s)

    def current(self) -> Epoch:
        return self.epoch_at(self.clock())

    def is_current(self, value: bytes) -> bool:
        """True iff value is the beacon value of the epoch containing now"""
        return value == self.current().value
