"""
Sweeps

Botnet-size sweeps over the circuit simulator and adversary-investment
curves over the request scheduler.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .abuse_model import AbuseModel
from .consensus import RelayModel
from .exceptions import SimulationError
from .policy import NORMALIZATION_INTERVAL_S, CircuitPolicy, SitePolicy, two_seed_true_costs
from .scheduler import EnforcementMode, EnforcementStrategy, Request, admit
from .simulator import SimReport, SimScenario, run_scenario

logger = logging.getLogger(__name__)

GUARD_DROP_THRESHOLD = 0.30
DDOS_BOT_RATE = 1200.0
# r_a this far below eps marks the end of the flat segment
KNEE_DROP = 0.02
# served adversary rate within this fraction of the ceiling marks saturation
SATURATION = 0.97


def _run_all(scenarios: Sequence[SimScenario], workers: int) -> List[SimReport]:
    if workers > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_scenario, scenarios))
    return [run_scenario(s) for s in scenarios]


@dataclass(frozen=True)
class SweepPoint:
    bots: float
    report: SimReport

    @property
    def failure_rate(self) -> float:
        return self.report.failure_rate

    def to_dict(self, threshold: float) -> Dict[str, object]:
        return {
            "bots": self.bots,
            "failure_rate": self.failure_rate,
            "legit_failure_rate": self.report.class_failure_rate("legit"),
            "attempts": self.report.attempts,
            "scale": self.report.scale,
            "above_threshold": self.failure_rate >= threshold,
        }


@dataclass
class SweepResult:
    defended: bool
    threshold: float
    points: List[SweepPoint] = field(default_factory=list)

    @property
    def crossing(self) -> Optional[float]:
        """Smallest botnet size whose failure rate reaches the threshold"""
        for point in self.points:
            if point.failure_rate >= self.threshold:
                return point.bots
        return None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([p.to_dict(self.threshold) for p in self.points])
        frame.insert(0, "defended", self.defended)
        return frame


def ddos_sweep(
    sizes: Sequence[float],
    relays: Sequence[RelayModel],
    baseline: AbuseModel,
    policy: Optional[CircuitPolicy] = None,
    bot_rate: float = DDOS_BOT_RATE,
    seed: int = 0,
    duration_s: Optional[float] = None,
    target_attempts: float = 60_000,
    threshold: float = GUARD_DROP_THRESHOLD,
    workers: int = 1,
) -> SweepResult:
    """
    Failure rate against botnet size

    Every size runs with the same seed so neighbouring points share random
    numbers.

    Args:
        sizes: Bots per interval, ascending
        relays: Network with absolute capacities
        baseline: Legitimate load (its n2 is replaced by each size)
        policy: Circuit policy, None for the undefended network
        bot_rate: Circuits a bot wants per interval
        seed: RNG seed
        duration_s: Horizon (10 intervals by default)
        target_attempts: Attempts each point aims for
        threshold: Failure rate at which clients drop their guard
        workers: Processes used for the points

    Returns:
        SweepResult

    Raises:
        SimulationError: sizes not ascending or empty
    """
    if not sizes:
        raise SimulationError("ddos_sweep needs at least one size", "sizes")
    if any(b < a for a, b in zip(sizes, sizes[1:])):
        raise SimulationError("Botnet sizes must be ascending", "sizes")
    horizon = duration_s if duration_s is not None else 10 * baseline.t0
    scenarios = [
        SimScenario(
            model=AbuseModel.from_interval_counts(
                baseline.n1, size, baseline.r1, bot_rate, baseline.rho, baseline.t0
            ),
            relays=list(relays),
            policy=policy,
            duration_s=horizon,
            seed=seed,
            target_attempts=target_attempts,
        )
        for size in sizes
    ]
    reports = _run_all(scenarios, workers)
    result = SweepResult(defended=policy is not None, threshold=threshold)
    for size, report in zip(sizes, reports):
        result.points.append(SweepPoint(float(size), report))
        logger.info(
            "%s botnet %.0f: failure %.4f",
            "defended" if policy else "undefended",
            size,
            report.failure_rate,
        )
    return result


# Adversary investment curves


@dataclass(frozen=True)
class CurvePoint:
    cost: float
    offered: Dict[str, float]
    adversary_served: float
    r_a: Optional[float]

    def to_dict(self) -> Dict[str, object]:
        row: Dict[str, object] = {
            "cost": self.cost,
            "adversary_served": self.adversary_served,
            "r_a": self.r_a,
        }
        row.update({f"offered_{s}": rate for s, rate in sorted(self.offered.items())})
        return row


@dataclass
class PolicyCurve:
    mode: EnforcementMode
    k: float
    epsilon: float
    points: List[CurvePoint]
    knees: List[float]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([p.to_dict() for p in self.points])
        frame.insert(0, "mode", self.mode.value)
        return frame


def tor_rate_per_cost(policy: SitePolicy, true_costs: Dict[str, float]) -> Dict[str, float]:
    """Tor requests per second bought by one unit of budget, per seed type"""
    return {
        s: policy.seed_rates[s] * policy.weights[s] / (true_costs[s] * NORMALIZATION_INTERVAL_S)
        for s in true_costs
    }


def nontor_rate(policy: SitePolicy, cost: float) -> float:
    """Requests per second the same budget buys outside Tor"""
    return cost / policy.identity_cost * policy.baseline_rate / NORMALIZATION_INTERVAL_S


def queue_shares(strategy: EnforcementStrategy, seed_types: Sequence[str]) -> Dict[str, float]:
    total = sum(strategy.weight(s) for s in seed_types)
    return {s: strategy.r_max * strategy.weight(s) / total for s in seed_types}


def optimal_allocation(
    policy: SitePolicy,
    strategy: EnforcementStrategy,
    true_costs: Dict[str, float],
    cost: float,
    background: Dict[str, float],
) -> Dict[str, float]:
    """
    Adversary request rate per seed type for a budget

    Under basic and rate_limit every unit of budget goes to the seed type
    with the best rate per cost. Under wfq the adversary fills the spare
    share of each queue in order of rate per cost; what is left is spread
    over the queues in proportion to their shares.
    """
    per_cost = tor_rate_per_cost(policy, true_costs)
    order = sorted(per_cost, key=lambda s: (-per_cost[s], s))
    offered = {s: 0.0 for s in order}
    if cost <= 0:
        return offered
    if strategy.mode != EnforcementMode.WFQ:
        offered[order[0]] = cost * per_cost[order[0]]
        return offered
    shares = queue_shares(strategy, order)
    remaining = cost
    for s in order:
        headroom = max(0.0, shares[s] - background.get(s, 0.0))
        spend = min(remaining, headroom / per_cost[s])
        offered[s] += spend * per_cost[s]
        remaining -= spend
    if remaining > 0:
        total_share = sum(shares.values())
        for s in order:
            offered[s] += remaining * shares[s] / total_share * per_cost[s]
    return offered


def _stream(rate: float, seed_type: str, duration_s: float, phase: float) -> List[Request]:
    if rate <= 0:
        return []
    gap = 1.0 / rate
    count = int(math.floor((duration_s - phase * gap) * rate))
    return [Request(arrival=(phase + i) * gap, seed_type=seed_type) for i in range(count)]


def policy_curve(
    policy: SitePolicy,
    strategy: EnforcementStrategy,
    k: float = 0.5,
    grid: Optional[Sequence[float]] = None,
    background_rate: float = 5.0,
    duration_s: float = 60.0,
    seed: int = 0,
) -> PolicyCurve:
    """
    Normalized adversary rate r_a against adversary investment

    Adversary and legitimate background requests (background_rate per seed
    type, evenly spaced with random phases) go through the scheduler; r_a
    is the adversary's served Tor rate over the rate the same budget buys
    outside Tor.

    Args:
        policy: Site policy with at least two seed types
        strategy: Enforcement strategy at the site
        k: Cost ratio c_0' / c_1'
        grid: Investment levels (33 points from 0 to 4800 by default)
        background_rate: Legitimate requests per second per seed type
        duration_s: Trace length per point
        seed: RNG seed for stream phases

    Returns:
        PolicyCurve with detected knees
    """
    costs = list(grid) if grid is not None else [150.0 * i for i in range(33)]
    true_costs = two_seed_true_costs(policy, k)
    seed_types = list(true_costs)
    background = {s: background_rate for s in seed_types}
    rng = np.random.default_rng(seed)
    points = []
    for cost in costs:
        offered = optimal_allocation(policy, strategy, true_costs, cost, background)
        requests: List[Request] = []
        adversary_ids = set()
        for s in seed_types:
            for tag, rate in (("bg", background[s]), ("adv", offered[s])):
                stream = _stream(rate, s, duration_s, float(rng.random()))
                if tag == "adv":
                    adversary_ids.update(range(len(requests), len(requests) + len(stream)))
                requests.extend(stream)
        requests = [replace(r, request_id=i) for i, r in enumerate(requests)]
        report = admit(requests, strategy, until=duration_s)
        served = 0.0
        for s in seed_types:
            admitted = [d for d in report.decisions if d.admitted and d.request.seed_type == s]
            if not admitted:
                continue
            adv = sum(1 for d in admitted if d.request.request_id in adversary_ids)
            served += report.served.get(s, 0.0) * adv / len(admitted)
        served_rate = served / duration_s
        r_a = served_rate / nontor_rate(policy, cost) if cost > 0 else None
        points.append(CurvePoint(cost, offered, served_rate, r_a))
    knees = detect_knees(points, strategy, policy.epsilon, sum(background.values()))
    return PolicyCurve(strategy.mode, k, policy.epsilon, points, knees)


def detect_knees(
    points: Sequence[CurvePoint],
    strategy: EnforcementStrategy,
    epsilon: float,
    background_total: float,
) -> List[float]:
    """
    Costs at which added investment stops paying

    The first knee is the last point before r_a falls KNEE_DROP below
    epsilon. Under wfq the second knee is the first point where the served
    adversary rate reaches SATURATION of r_max minus the background.
    """
    if strategy.mode == EnforcementMode.BASIC:
        return []
    knees: List[float] = []
    previous: Optional[CurvePoint] = None
    for point in points:
        if point.r_a is None:
            continue
        if point.r_a < epsilon * (1 - KNEE_DROP):
            if previous is not None:
                knees.append(previous.cost)
            break
        previous = point
    if strategy.mode == EnforcementMode.WFQ and knees:
        ceiling = strategy.r_max - background_total
        for point in points:
            if point.cost > knees[0] and point.adversary_served >= SATURATION * ceiling:
                knees.append(point.cost)
                break
    return knees


def analytic_knees(
    policy: SitePolicy,
    strategy: EnforcementStrategy,
    k: float = 0.5,
    background_rate: float = 5.0,
) -> List[float]:
    """Knee costs implied by the queue shares and background load"""
    true_costs = two_seed_true_costs(policy, k)
    per_cost = tor_rate_per_cost(policy, true_costs)
    order = sorted(per_cost, key=lambda s: (-per_cost[s], s))
    if strategy.mode == EnforcementMode.BASIC:
        return []
    if strategy.mode == EnforcementMode.RATE_LIMIT:
        headroom = strategy.r_max - background_rate * len(order)
        return [headroom / per_cost[order[0]]]
    shares = queue_shares(strategy, order)
    knees = []
    spent = 0.0
    for s in order:
        spent += max(0.0, shares[s] - background_rate) / per_cost[s]
        knees.append(spent)
    return knees
