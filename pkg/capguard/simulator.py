"""
Circuit Creation Simulator

Event-driven replay of an abuse model on a relay network (simpy).

- Circuit demands arrive as one Poisson stream per client class and are
  assigned to a client at random.
- Each creation attempt draws a path and is offered to its three relays at
  the same instant. A relay is a FIFO single server with deterministic
  service time 1/capacity and a bound on creations held; a full relay
  drops. One drop fails the attempt.
- Failed attempts retry after an exponential delay: bots until success,
  legitimate clients up to max_retries times.
- With a circuit policy each client spends CAPS_PER_CIRCUIT capabilities
  per attempt from a budget refilling at T circuits per interval. An
  attempt waits until its capabilities are covered.

Clients, arrivals and capacities are divided by a common scale factor; the
load-to-capacity ratio, and with it the failure rate, is unchanged.
"""

import json
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Deque, Dict, Generator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import simpy
import yaml

from .abuse_model import AbuseModel
from .capacity_planner import CAPS_PER_CIRCUIT
from .consensus import (
    PathSelector,
    RelayModel,
    load_consensus,
    scale_capacities,
    synthesize_network,
)
from .exceptions import ConfigError, SimulationError
from .fluid_model import FluidModel, calibrate_kappa, desk_scale
from .policy import CircuitPolicy
from .token_bucket import TokenBucket

logger = logging.getLogger(__name__)

DEFAULT_TARGET_ATTEMPTS = 120_000
# Simulated clients per class; each stands for N / scale / count real ones
MAX_CLIENTS_PER_CLASS = 2000


class ClientClass(str, Enum):
    LEGIT = "legit"
    BOT = "bot"


def circuit_policy(max_circuit_rate: float, interval_s: float = 600.0) -> CircuitPolicy:
    """Policy carrying only what the simulator reads: T per interval"""
    return CircuitPolicy(
        max_circuit_rate=max_circuit_rate,
        identity_cost=1.0,
        seed_costs={"captcha": 1.0},
        interval_s=interval_s,
    )


@dataclass
class SimScenario:
    """
    Attributes:
        model: Abuse model at full scale
        relays: Relays with capacities in onionskins/s at full scale
        policy: Circuit policy in force, None for the undefended network
        duration_s: Simulated horizon
        seed: RNG seed
        max_retries: Retries of a legitimate client per circuit
        retry_mean_s: Mean of the exponential retry delay
        scale: Desk scale factor; None picks one from target_attempts
        target_attempts: Attempts an adaptively scaled run aims for
        bin_s: Width of the time-series bins
        bw_weights: Position weights for path selection
    """

    model: AbuseModel
    relays: List[RelayModel]
    policy: Optional[CircuitPolicy] = None
    duration_s: float = 6000.0
    seed: int = 0
    max_retries: int = 3
    retry_mean_s: float = 1.0
    scale: Optional[float] = None
    target_attempts: float = DEFAULT_TARGET_ATTEMPTS
    bin_s: float = 60.0
    bw_weights: Optional[Dict[str, float]] = None

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        if self.duration_s < 10 * self.model.t0:
            logger.warning(
                "Horizon %.0fs is shorter than 10 intervals; statistics may be unstable",
                self.duration_s,
            )
        if self.max_retries < 0 or self.retry_mean_s <= 0:
            raise ConfigError("max_retries must be >= 0 and retry_mean_s positive")


@dataclass
class ClassStats:
    demands: int = 0
    attempts: int = 0
    successes: int = 0
    failures: int = 0
    in_flight: int = 0
    abandoned: int = 0
    deferred: int = 0

    @property
    def failure_rate(self) -> float:
        return self.failures / self.attempts if self.attempts else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "demands": self.demands,
            "attempts": self.attempts,
            "successes": self.successes,
            "failures": self.failures,
            "in_flight": self.in_flight,
            "abandoned": self.abandoned,
            "deferred": self.deferred,
            "failure_rate": self.failure_rate,
        }


@dataclass
class SimReport:
    """Outcome of one run; fully determined by (scenario, seed)"""

    seed: int
    scale: float
    duration_s: float
    defended: bool
    classes: Dict[str, ClassStats]
    relays: List[Dict[str, Any]]
    retries: Dict[str, Dict[str, int]]
    time_series: List[Dict[str, Any]]
    clients: Dict[str, int] = field(default_factory=dict)

    @property
    def attempts(self) -> int:
        return sum(c.attempts for c in self.classes.values())

    @property
    def failure_rate(self) -> float:
        attempts = self.attempts
        if not attempts:
            return 0.0
        return sum(c.failures for c in self.classes.values()) / attempts

    def class_failure_rate(self, client_class: Union[ClientClass, str]) -> float:
        return self.classes[ClientClass(client_class).value].failure_rate

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "scale": self.scale,
            "duration_s": self.duration_s,
            "defended": self.defended,
            "failure_rate": self.failure_rate,
            "classes": {name: stats.to_dict() for name, stats in self.classes.items()},
            "clients": dict(self.clients),
            "relays": self.relays,
            "retries": self.retries,
            "time_series": self.time_series,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def time_series_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.time_series)

    def write(self, out_dir: Union[str, Path], stem: str) -> Tuple[str, str]:
        """
        Write <stem>.json and <stem>_series.csv

        Returns:
            (json path, csv path)
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path = out / f"{stem}.json"
        csv_path = out / f"{stem}_series.csv"
        json_path.write_text(self.to_json() + "\n", encoding="utf-8")
        self.time_series_frame().to_csv(csv_path, index=False)
        return str(json_path), str(csv_path)


class RelayServer:
    """FIFO single server with deterministic service, evaluated at arrival"""

    __slots__ = (
        "fingerprint",
        "service_s",
        "bound",
        "horizon",
        "departures",
        "busy_until",
        "offered",
        "dropped",
        "busy_s",
        "sojourn_s",
    )

    def __init__(self, relay: RelayModel, scale: float, horizon: float) -> None:
        self.fingerprint = relay.fingerprint
        self.service_s = scale / relay.capacity
        self.bound = relay.queue_bound
        self.horizon = horizon
        self.departures: Deque[float] = deque()
        self.busy_until = 0.0
        self.offered = 0
        self.dropped = 0
        self.busy_s = 0.0
        self.sojourn_s = 0.0

    def offer(self, t: float) -> Optional[float]:
        """
        Returns:
            Departure time, or None if the relay is full
        """
        self.offered += 1
        departures = self.departures
        while departures and departures[0] <= t:
            departures.popleft()
        if len(departures) >= self.bound:
            self.dropped += 1
            return None
        start = max(t, self.busy_until)
        done = start + self.service_s
        self.busy_until = done
        departures.append(done)
        h = self.horizon
        self.busy_s += max(0.0, min(done, h) - min(start, h))
        self.sojourn_s += max(0.0, min(done, h) - t)
        return done

    def summary(self) -> Dict[str, Any]:
        h = self.horizon
        return {
            "fingerprint": self.fingerprint,
            "offered": self.offered,
            "dropped": self.dropped,
            "loss_rate": self.dropped / self.offered if self.offered else 0.0,
            "utilization": self.busy_s / h,
            "mean_in_system": self.sojourn_s / h,
            "offered_load": self.offered / h * self.service_s,
        }


class CircuitSimulator:
    """One simpy environment running one scenario"""

    def __init__(self, scenario: SimScenario, scale: float, track_clients: bool = False) -> None:
        self.scenario = scenario
        self.scale = scale
        self.horizon = scenario.duration_s
        self.rng = np.random.default_rng(scenario.seed)
        self.env = simpy.Environment()
        self.selector = PathSelector(scenario.relays, scenario.bw_weights)
        self.servers = [RelayServer(r, scale, self.horizon) for r in scenario.relays]
        self.stats = {c.value: ClassStats() for c in ClientClass}
        self.retries: Dict[str, Counter] = {c.value: Counter() for c in ClientClass}
        n_bins = max(1, math.ceil(self.horizon / scenario.bin_s))
        self.bins = np.zeros((n_bins, 4), dtype=np.int64)
        self.track_clients = track_clients
        self.client_attempts: Dict[Tuple[str, int], List[float]] = {}
        self.clients: Dict[str, int] = {}
        self.multiplicity: Dict[str, float] = {}
        self.budgets: Dict[str, List[TokenBucket]] = {}
        model = scenario.model
        self._demand = {ClientClass.LEGIT: model.r1, ClientClass.BOT: model.r2}
        self._population = {ClientClass.LEGIT: model.n1 / scale, ClientClass.BOT: model.n2 / scale}

    def _setup_clients(self, client_class: ClientClass) -> int:
        population = self._population[client_class]
        if population <= 0 or self._demand[client_class] <= 0:
            self.clients[client_class.value] = 0
            return 0
        count = min(MAX_CLIENTS_PER_CLASS, max(1, round(population)))
        weight = population / count
        self.clients[client_class.value] = count
        self.multiplicity[client_class.value] = weight
        policy = self.scenario.policy
        if policy is not None:
            rate = CAPS_PER_CIRCUIT * policy.max_circuit_rate * weight / policy.interval_s
            capacity = CAPS_PER_CIRCUIT * policy.max_circuit_rate * weight
            self.budgets[client_class.value] = [
                TokenBucket(capacity, rate, float(self.rng.uniform(0, CAPS_PER_CIRCUIT)), 0.0)
                for _ in range(count)
            ]
        return count

    def _arrivals(self, client_class: ClientClass, count: int) -> Generator:
        rate = self._population[client_class] * self._demand[client_class] / self.scenario.model.t0
        while True:
            yield self.env.timeout(float(self.rng.exponential(1.0 / rate)))
            if self.env.now >= self.horizon:
                return
            client = int(self.rng.integers(count))
            self.stats[client_class.value].demands += 1
            self.env.process(self._circuit(client_class, client))

    def _attempt(self, client_class: ClientClass, client: int) -> bool:
        t = self.env.now
        guard, middle, exit_ = self.selector.select_indices(self.rng)
        # every hop is offered, dropped or not
        done = [self.servers[i].offer(t) for i in (guard, middle, exit_)]
        stats = self.stats[client_class.value]
        stats.attempts += 1
        row = self.bins[min(int(t // self.scenario.bin_s), len(self.bins) - 1)]
        column = 0 if client_class == ClientClass.LEGIT else 2
        row[column] += 1
        if self.track_clients:
            self.client_attempts.setdefault((client_class.value, client), []).append(t)
        if any(d is None for d in done):
            stats.failures += 1
            row[column + 1] += 1
            return False
        if max(d for d in done if d is not None) > self.horizon:
            stats.in_flight += 1
        else:
            stats.successes += 1
        return True

    def _circuit(self, client_class: ClientClass, client: int) -> Generator:
        stats = self.stats[client_class.value]
        budget = self.budgets.get(client_class.value)
        attempts = 0
        while True:
            if budget is not None:
                wait = budget[client].reserve(self.env.now, CAPS_PER_CIRCUIT)
                if self.env.now + wait >= self.horizon:
                    stats.deferred += 1
                    return
                if wait > 0:
                    yield self.env.timeout(wait)
            attempts += 1
            if self._attempt(client_class, client):
                self.retries[client_class.value][attempts] += 1
                return
            if client_class == ClientClass.LEGIT and attempts > self.scenario.max_retries:
                stats.abandoned += 1
                self.retries[client_class.value][attempts] += 1
                return
            delay = float(self.rng.exponential(self.scenario.retry_mean_s))
            if self.env.now + delay >= self.horizon:
                return
            yield self.env.timeout(delay)

    def run(self) -> SimReport:
        for client_class in ClientClass:
            count = self._setup_clients(client_class)
            if count:
                self.env.process(self._arrivals(client_class, count))
        self.env.run(until=self.horizon)
        return self._report()

    def _report(self) -> SimReport:
        width = self.scenario.bin_s
        series = []
        for i, (la, lf, ba, bf) in enumerate(self.bins.tolist()):
            attempts = la + ba
            series.append(
                {
                    "t_start": i * width,
                    "legit_attempts": la,
                    "legit_failures": lf,
                    "bot_attempts": ba,
                    "bot_failures": bf,
                    "failure_rate": (lf + bf) / attempts if attempts else 0.0,
                }
            )
        return SimReport(
            seed=self.scenario.seed,
            scale=self.scale,
            duration_s=self.horizon,
            defended=self.scenario.policy is not None,
            classes=self.stats,
            relays=[s.summary() for s in self.servers],
            retries={
                name: {str(k): v for k, v in sorted(counter.items())}
                for name, counter in self.retries.items()
            },
            time_series=series,
            clients=dict(self.clients),
        )


def resolve_scale(scenario: SimScenario) -> float:
    if scenario.scale is not None:
        if scenario.scale <= 0:
            raise ConfigError("scale must be positive")
        return float(scenario.scale)
    fluid = FluidModel(scenario.relays, scenario.bw_weights, scenario.max_retries)
    return desk_scale(
        fluid, scenario.model, scenario.duration_s, scenario.target_attempts, scenario.policy
    )


def run_scenario(scenario: SimScenario, track_clients: bool = False) -> SimReport:
    """
    Simulate one scenario

    Args:
        scenario: Scenario at full scale
        track_clients: Keep per-client attempt times (see CircuitSimulator)

    Returns:
        SimReport
    """
    scale = resolve_scale(scenario)
    logger.info(
        "Simulating %.0fs at scale %.4g (seed %d, defended=%s)",
        scenario.duration_s,
        scale,
        scenario.seed,
        scenario.policy is not None,
    )
    report = CircuitSimulator(scenario, scale, track_clients).run()
    logger.info("Failure rate %.4f over %d attempts", report.failure_rate, report.attempts)
    return report


def calibrated_network(
    model: AbuseModel,
    target_failure: float,
    n_relays: int = 70,
    network_seed: int = 0,
    sigma: float = 4.5,
    queue_bound: int = 10,
    max_retries: int = 3,
    policy: Optional[CircuitPolicy] = None,
) -> Tuple[List[RelayModel], float]:
    """
    Synthetic network whose fluid failure rate under model is target_failure

    Returns:
        (relays with absolute capacities, kappa)
    """
    relative = synthesize_network(n_relays, network_seed, sigma=sigma, queue_bound=queue_bound)
    fluid = FluidModel(relative, max_retries=max_retries)
    kappa = calibrate_kappa(fluid, model, target_failure, policy)
    return scale_capacities(relative, kappa), kappa


def _section(data: Dict[str, Any], key: str) -> Dict[str, Any]:
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"Scenario section '{key}' must be a mapping")
    return value


def scenario_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None) -> SimScenario:
    """
    Build a scenario from its file representation

    network takes either consensus (a CSV path with absolute capacities) or
    synthesize (n_relays, seed, sigma) together with kappa or
    target_failure, calibrated against reference (an abuse model, the
    scenario's own by default).
    """
    model = AbuseModel.from_dict(_section(data, "model"))
    network = _section(data, "network")
    queue_bound = int(network.get("queue_bound", 10))
    max_retries = int(data.get("max_retries", 3))
    if "consensus" in network:
        path = Path(network["consensus"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        relays = load_consensus(path, queue_bound)
    else:
        synth = _section(network, "synthesize")
        relative = synthesize_network(
            int(synth.get("n_relays", 70)),
            int(synth.get("seed", 0)),
            sigma=float(synth.get("sigma", 4.5)),
            queue_bound=queue_bound,
        )
        if "kappa" in network:
            kappa = float(network["kappa"])
        elif "target_failure" in network:
            reference = (
                AbuseModel.from_dict(_section(network, "reference"))
                if network.get("reference")
                else model
            )
            kappa = calibrate_kappa(
                FluidModel(relative, max_retries=max_retries),
                reference,
                float(network["target_failure"]),
            )
        else:
            raise ConfigError("network needs consensus, kappa or target_failure")
        relays = scale_capacities(relative, kappa)
    policy_data = data.get("policy")
    policy = None
    if policy_data:
        policy = circuit_policy(
            float(policy_data["max_circuit_rate"]),
            float(policy_data.get("interval_s", model.t0)),
        )
    scale = data.get("scale")
    return SimScenario(
        model=model,
        relays=relays,
        policy=policy,
        duration_s=float(data.get("duration_s", 10 * model.t0)),
        seed=int(data.get("seed", 0)),
        max_retries=max_retries,
        retry_mean_s=float(data.get("retry_mean_s", 1.0)),
        scale=float(scale) if scale is not None else None,
        target_attempts=float(data.get("target_attempts", DEFAULT_TARGET_ATTEMPTS)),
        bin_s=float(data.get("bin_s", 60.0)),
    )


def load_scenario(path: Union[str, Path]) -> SimScenario:
    """
    Read a YAML scenario file

    Raises:
        ConfigError: Invalid YAML (with its line) or invalid scenario values
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"Cannot read scenario {path}: {e}", path=str(path)) from e
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(
            f"Scenario is not valid YAML: {e}",
            path=str(path),
            line=mark.line + 1 if mark else None,
        ) from e
    if not isinstance(data, dict):
        raise ConfigError("Scenario file must hold a mapping", path=str(path))
    try:
        return scenario_from_dict(data, path.parent)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Malformed scenario {path}: {e}", path=str(path)) from e


def window_attempt_bound(policy: CircuitPolicy, window_s: float, weight: float = 1.0) -> int:
    """
    Most attempts one simulated client can make in any window of window_s

    The budget holds one interval's worth of circuits and refills at T per
    interval, plus the initial fill below one circuit.
    """
    per_s = policy.max_circuit_rate * weight / policy.interval_s
    return math.ceil(per_s * window_s) + math.ceil(policy.max_circuit_rate * weight) + 1


def check_budget_conservation(
    simulator: CircuitSimulator, window_s: float
) -> Dict[str, Any]:
    """
    Largest per-client attempt count seen in any window_s sliding window

    Returns:
        {"max_attempts": n, "bound": b, "ok": n <= b}, or ok=True with
        bound None when no policy is in force
    """
    policy = simulator.scenario.policy
    if policy is None:
        return {"max_attempts": None, "bound": None, "ok": True}
    worst = 0
    bound = 0
    for (client_class, _), times in simulator.client_attempts.items():
        weight = simulator.multiplicity.get(client_class, 1.0)
        bound = max(bound, window_attempt_bound(policy, window_s, weight))
        j = 0
        for i, t in enumerate(times):
            while times[j] < t - window_s:
                j += 1
            worst = max(worst, i - j + 1)
    return {"max_attempts": worst, "bound": bound, "ok": worst <= bound}


def paired_runs(
    base: SimScenario, policy: CircuitPolicy, seeds: Sequence[int]
) -> List[Tuple[SimReport, SimReport]]:
    """Undefended and defended run per seed at one shared scale"""
    undefended = replace(base, policy=None)
    scale = resolve_scale(undefended)
    pairs = []
    for seed in seeds:
        plain = replace(undefended, seed=seed, scale=scale)
        guarded = replace(plain, policy=policy)
        pairs.append((run_scenario(plain), run_scenario(guarded)))
    if not pairs:
        raise SimulationError("paired_runs needs at least one seed", "seeds")
    return pairs
