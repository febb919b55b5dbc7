"""
Request Scheduler

Admission of capability-bearing requests under the three enforcement
strategies:

- basic: every valid request is served
- rate_limit: one queue drained at r_max, shared by all seed types
- wfq: one queue per seed type, each guaranteed r_max * w / sum(w). A
  queue that saw no arrival for idle_window seconds and holds no backlog
  lends its share to the busy queues.

Queues are fluid: backlog is measured in requests and drains continuously,
which keeps the scheduler deterministic for a given arrival order.
"""

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional

_EPS = 1e-9


class EnforcementMode(str, Enum):
    BASIC = "basic"
    RATE_LIMIT = "rate_limit"
    WFQ = "wfq"


@dataclass(frozen=True)
class EnforcementStrategy:
    """
    Attributes:
        mode: Enforcement mode
        r_max: Global ceiling on served Tor requests per second
        weights: Queue weight per seed type (1 for unlisted types)
        queue_limit: Backlog bound in requests, per queue
        idle_window_s: Silence after which a WFQ queue lends its share
    """

    mode: EnforcementMode = EnforcementMode.BASIC
    r_max: float = 50.0
    weights: Dict[str, float] = field(default_factory=dict)
    queue_limit: float = 50.0
    idle_window_s: float = 1.0

    def weight(self, seed_type: str) -> float:
        return self.weights.get(seed_type, 1.0)


@dataclass(frozen=True)
class Request:
    arrival: float
    seed_type: str
    request_id: int = 0


@dataclass(frozen=True)
class AdmitDecision:
    request: Request
    admitted: bool
    backpressure: bool = False


@dataclass
class AdmitReport:
    """Per-request decisions plus served-rate telemetry"""

    decisions: List[AdmitDecision]
    offered: Dict[str, int]
    admitted: Dict[str, int]
    dropped: Dict[str, int]
    served: Dict[str, float]
    duration: float

    def served_rate(self, seed_type: Optional[str] = None) -> float:
        if self.duration <= 0:
            return 0.0
        if seed_type is None:
            return sum(self.served.values()) / self.duration
        return self.served.get(seed_type, 0.0) / self.duration

    def to_dict(self) -> Dict[str, object]:
        return {
            "offered": dict(self.offered),
            "admitted": dict(self.admitted),
            "dropped": dict(self.dropped),
            "served": dict(self.served),
            "duration": self.duration,
        }


class FluidScheduler:
    """Incremental scheduler; feed requests in arrival order"""

    def __init__(
        self,
        strategy: EnforcementStrategy,
        seed_types: Iterable[str] = (),
        start: float = 0.0,
    ) -> None:
        self.strategy = strategy
        self.now = start
        self.start = start
        self.backlog: Dict[str, float] = {}
        self.served: Dict[str, float] = {}
        self.last_arrival: Dict[str, float] = {}
        for seed_type in list(strategy.weights) + list(seed_types):
            self._register(seed_type)

    def _register(self, seed_type: str) -> None:
        if seed_type not in self.backlog:
            self.backlog[seed_type] = 0.0
            self.served[seed_type] = 0.0
            self.last_arrival[seed_type] = float("-inf")

    def _is_lender(self, seed_type: str) -> bool:
        return (
            self.backlog[seed_type] <= _EPS
            and self.now - self.last_arrival[seed_type] >= self.strategy.idle_window_s
        )

    def _rates(self, busy: List[str]) -> Dict[str, float]:
        r_max = self.strategy.r_max
        if self.strategy.mode == EnforcementMode.RATE_LIMIT:
            total = sum(self.backlog[c] for c in busy)
            return {c: r_max * self.backlog[c] / total for c in busy}

        total_weight = sum(self.strategy.weight(c) for c in self.backlog)
        guaranteed = {c: r_max * self.strategy.weight(c) / total_weight for c in self.backlog}
        spare = sum(guaranteed[c] for c in self.backlog if c not in busy and self._is_lender(c))
        busy_weight = sum(self.strategy.weight(c) for c in busy)
        return {
            c: guaranteed[c] + spare * self.strategy.weight(c) / busy_weight for c in busy
        }

    def advance(self, t: float) -> None:
        """Drain backlogs up to time t"""
        while self.now < t:
            busy = [c for c, b in self.backlog.items() if b > _EPS]
            if not busy:
                self.now = t
                return
            rates = self._rates(busy)
            dt = t - self.now
            for c in busy:
                if rates[c] > 0:
                    dt = min(dt, self.backlog[c] / rates[c])
            if self.strategy.mode == EnforcementMode.WFQ:
                # a quiet queue turns lender when its idle window expires
                for c, b in self.backlog.items():
                    boundary = self.last_arrival[c] + self.strategy.idle_window_s
                    if b <= _EPS and self.now < boundary < self.now + dt:
                        dt = boundary - self.now
            for c in busy:
                drained = min(self.backlog[c], rates[c] * dt)
                self.backlog[c] -= drained
                self.served[c] += drained
                if self.backlog[c] <= _EPS:
                    self.served[c] += self.backlog[c]
                    self.backlog[c] = 0.0
            self.now += dt

    def _queue_depth(self, seed_type: str) -> float:
        if self.strategy.mode == EnforcementMode.RATE_LIMIT:
            return sum(self.backlog.values())
        return self.backlog[seed_type]

    def offer(self, request: Request) -> AdmitDecision:
        self._register(request.seed_type)
        if self.strategy.mode == EnforcementMode.BASIC:
            self.now = max(self.now, request.arrival)
            self.served[request.seed_type] += 1
            return AdmitDecision(request, True)

        self.advance(request.arrival)
        self.last_arrival[request.seed_type] = request.arrival
        if self._queue_depth(request.seed_type) + 1 > self.strategy.queue_limit + _EPS:
            return AdmitDecision(request, False, backpressure=True)
        self.backlog[request.seed_type] += 1
        return AdmitDecision(request, True)


def admit(
    requests: Iterable[Request],
    strategy: EnforcementStrategy,
    start: float = 0.0,
    until: Optional[float] = None,
) -> AdmitReport:
    """
    Run a request stream through the scheduler

    Args:
        requests: Requests tagged with the seed type of their issuing AA
        strategy: Enforcement strategy
        start: Clock value at which queues start empty
        until: Horizon for the served telemetry (defaults to the last arrival)

    Returns:
        AdmitReport; requests still backlogged at the horizon count as
        admitted but not served
    """
    ordered = sorted(requests, key=lambda r: (r.arrival, r.request_id))
    scheduler = FluidScheduler(strategy, start=start)
    decisions = [scheduler.offer(r) for r in ordered]
    horizon = until if until is not None else (ordered[-1].arrival if ordered else start)
    scheduler.advance(horizon)

    offered: Counter = Counter(d.request.seed_type for d in decisions)
    admitted: Counter = Counter(d.request.seed_type for d in decisions if d.admitted)
    return AdmitReport(
        decisions=decisions,
        offered=dict(offered),
        admitted=dict(admitted),
        dropped={c: offered[c] - admitted.get(c, 0) for c in offered},
        served=dict(scheduler.served),
        duration=horizon - start,
    )
