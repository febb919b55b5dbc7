"""
Fluid Model

Deterministic estimate of circuit creation failure. A relay offered more
creations per second than it can process drops the excess:

    loss_i = max(0, 1 - capacity_i / (attempt_rate * share_i))

and an attempt fails when any of its three hops drops it. Retries raise
the attempt rate, so the failure rate is the least fixed point of

    f = 1 - prod_positions (1 - sum_i P(position -> i) * loss_i(attempts(f)))

found by iterating upwards from f = 0. The model calibrates relay
capacities, inverts failure rates into bot demand and sizes the event
simulator.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .abuse_model import AbuseModel
from .consensus import POSITIONS, PathSelector, RelayModel
from .exceptions import SimulationError
from .policy import CircuitPolicy

logger = logging.getLogger(__name__)

# Bots retry until success; attempts per circuit are capped here
BOT_FAILURE_CAP = 0.999
FIXED_POINT_TOLERANCE = 1e-10
MAX_ITERATIONS = 5000
BISECTION_STEPS = 100


@dataclass(frozen=True)
class FluidResult:
    failure_rate: float
    attempt_rate: float
    attempts_per_circuit: Dict[str, float]
    relay_loss: List[float] = field(default_factory=list)
    iterations: int = 0

    def to_dict(self) -> Dict[str, object]:
        return {
            "failure_rate": self.failure_rate,
            "attempt_rate": self.attempt_rate,
            "attempts_per_circuit": dict(self.attempts_per_circuit),
            "iterations": self.iterations,
        }


def legit_attempts(failure_rate: float, max_retries: int) -> float:
    """Expected attempts per circuit with at most max_retries retries"""
    return math.fsum(failure_rate**j for j in range(max_retries + 1))


def bot_attempts(failure_rate: float) -> float:
    return 1.0 / (1.0 - min(failure_rate, BOT_FAILURE_CAP))


def policy_attempt_cap(policy: Optional[CircuitPolicy], t0: float) -> float:
    """Attempts one client may make per model interval under policy"""
    if policy is None:
        return math.inf
    return policy.max_circuit_rate * t0 / policy.interval_s


class FluidModel:
    """Fluid loss model of one relay network"""

    def __init__(
        self,
        relays: Sequence[RelayModel],
        bw_weights: Optional[Dict[str, float]] = None,
        max_retries: int = 3,
    ) -> None:
        selector = PathSelector(relays, bw_weights)
        self.relays = list(relays)
        self.position_probs = np.vstack([selector.probabilities[p] for p in POSITIONS])
        self.shares = selector.load_shares()
        self.capacities = np.array([r.capacity for r in self.relays], dtype=float)
        self.max_retries = max_retries

    def attempts(
        self, model: AbuseModel, failure_rate: float, policy: Optional[CircuitPolicy] = None
    ) -> Dict[str, float]:
        """Attempts per client per interval, by class"""
        cap = policy_attempt_cap(policy, model.t0)
        return {
            "legit": min(model.r1 * legit_attempts(failure_rate, self.max_retries), cap),
            "bot": min(model.r2 * bot_attempts(failure_rate), cap),
        }

    def attempt_rate(
        self, model: AbuseModel, failure_rate: float, policy: Optional[CircuitPolicy] = None
    ) -> float:
        per_client = self.attempts(model, failure_rate, policy)
        return (model.n1 * per_client["legit"] + model.n2 * per_client["bot"]) / model.t0

    def relay_loss(self, attempt_rate: float, capacity_factor: float = 1.0) -> np.ndarray:
        offered = attempt_rate * self.shares
        with np.errstate(divide="ignore", invalid="ignore"):
            loss = 1.0 - capacity_factor * self.capacities / offered
        loss = np.where(offered > 0, loss, 0.0)
        return np.clip(loss, 0.0, 1.0)

    def path_failure(self, attempt_rate: float, capacity_factor: float = 1.0) -> float:
        per_position = self.position_probs @ self.relay_loss(attempt_rate, capacity_factor)
        return float(1.0 - np.prod(1.0 - per_position))

    def solve(
        self,
        model: AbuseModel,
        policy: Optional[CircuitPolicy] = None,
        capacity_factor: float = 1.0,
    ) -> FluidResult:
        """
        Failure rate at the least fixed point

        Args:
            model: Abuse model
            policy: Circuit policy capping each client's attempts, if any
            capacity_factor: Multiplier applied to every relay capacity

        Returns:
            FluidResult
        """
        f = 0.0
        iterations = 0
        for iterations in range(1, MAX_ITERATIONS + 1):
            nxt = self.path_failure(self.attempt_rate(model, f, policy), capacity_factor)
            if abs(nxt - f) < FIXED_POINT_TOLERANCE:
                f = nxt
                break
            f = nxt
        else:
            logger.warning("Fluid model stopped after %d iterations at f=%.6f", iterations, f)
        rate = self.attempt_rate(model, f, policy)
        return FluidResult(
            failure_rate=f,
            attempt_rate=rate,
            attempts_per_circuit={
                "legit": legit_attempts(f, self.max_retries),
                "bot": bot_attempts(f),
            },
            relay_loss=self.relay_loss(rate, capacity_factor).tolist(),
            iterations=iterations,
        )

    def failure_rate(
        self,
        model: AbuseModel,
        policy: Optional[CircuitPolicy] = None,
        capacity_factor: float = 1.0,
    ) -> float:
        return self.solve(model, policy, capacity_factor).failure_rate


def _bisect(
    fn: Callable[[float], float],
    lo: float,
    hi: float,
    target: float,
    increasing: bool,
    log: bool,
) -> float:
    f_lo, f_hi = fn(lo), fn(hi)
    low_value, high_value = (f_lo, f_hi) if increasing else (f_hi, f_lo)
    if not low_value <= target <= high_value:
        raise SimulationError(
            f"Target {target} outside [{low_value:.4f}, {high_value:.4f}] on [{lo}, {hi}]",
            "target",
        )
    for _ in range(BISECTION_STEPS):
        mid = math.sqrt(lo * hi) if log else (lo + hi) / 2
        if (fn(mid) < target) == increasing:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi) if log else (lo + hi) / 2


def calibrate_kappa(
    fluid: FluidModel,
    model: AbuseModel,
    target: float,
    policy: Optional[CircuitPolicy] = None,
    lo: float = 1e-12,
    hi: float = 1e12,
) -> float:
    """
    Capacity factor giving the target failure rate

    Args:
        fluid: Fluid model over relays with relative capacities
        model: Reference abuse model (unscaled)
        target: Failure rate to hit
        policy: Circuit policy in force on the reference day, if any

    Returns:
        Factor kappa; relay capacity in onionskins/s is kappa * capacity

    Raises:
        SimulationError: No factor in [lo, hi] reaches the target
    """
    kappa = _bisect(
        lambda k: fluid.failure_rate(model, policy, k),
        lo,
        hi,
        target,
        increasing=False,
        log=True,
    )
    logger.info("Calibrated kappa=%.6g for failure rate %.3f", kappa, target)
    return kappa


def estimate_bot_rate(
    fluid: FluidModel,
    model: AbuseModel,
    observed_failure_rate: float,
    capacity_factor: float = 1.0,
    lo: float = 1e-3,
    hi: float = 1e5,
) -> float:
    """
    Per-bot circuit demand r2 explaining an observed failure rate

    Args:
        fluid: Fluid model of the network
        model: Abuse model; its r2 is ignored
        observed_failure_rate: Failure rate measured on the day
        capacity_factor: Calibrated capacity factor

    Returns:
        r2 in circuits per bot per interval

    Raises:
        SimulationError: No rate in [lo, hi] explains the observation
    """
    return _bisect(
        lambda r2: fluid.failure_rate(model.with_bot_rate(r2), None, capacity_factor),
        lo,
        hi,
        observed_failure_rate,
        increasing=True,
        log=True,
    )


def desk_scale(
    fluid: FluidModel,
    model: AbuseModel,
    duration_s: float,
    target_attempts: float,
    policy: Optional[CircuitPolicy] = None,
    capacity_factor: float = 1.0,
) -> float:
    """
    Common divisor for clients, arrivals and capacities

    Chosen so an event-driven run of duration_s makes about target_attempts
    creation attempts. Never below 1.
    """
    rate = fluid.solve(model, policy, capacity_factor).attempt_rate
    return max(1.0, rate * duration_s / target_attempts)
