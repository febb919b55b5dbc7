"""
Policy Engine

Derives site weights w_i and relay issuance rates q_i from cost parameters,
and evaluates adversary strategies against the resulting policy.

All rates share one normalization interval (600 s by default).
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import numpy as np
import yaml

from .exceptions import PolicyError

NORMALIZATION_INTERVAL_S = 600.0
SIMPLEX_TOLERANCE = 1e-12
BOUND_SLACK = 1e-9


def _require_positive(name: str, value: float) -> None:
    if not value > 0:
        raise PolicyError(f"{name} must be positive, got {value}", name)


def derive_site_weights(
    epsilon: float,
    baseline_rate: float,
    identity_cost: float,
    seed_costs: Mapping[str, float],
    seed_rates: Mapping[str, float],
) -> Dict[str, float]:
    """
    Most permissive per-seed weights: w_i = eps * c_i * O / (lambda * r_i)

    Args:
        epsilon: Site factor eps
        baseline_rate: Non-Tor baseline rate O (requests per interval)
        identity_cost: Cost lambda of one network identity
        seed_costs: c_i per seed type
        seed_rates: r_i per seed type (pre-capabilities per interval)

    Returns:
        w_i per seed type

    Raises:
        PolicyError: Any non-positive parameter or a seed type without a rate
    """
    _require_positive("epsilon", epsilon)
    _require_positive("baseline_rate", baseline_rate)
    _require_positive("identity_cost", identity_cost)
    weights = {}
    for seed_type, cost in seed_costs.items():
        if seed_type not in seed_rates:
            raise PolicyError(f"No issuance rate for seed type {seed_type}", seed_type)
        _require_positive(f"seed_costs.{seed_type}", cost)
        _require_positive(f"seed_rates.{seed_type}", seed_rates[seed_type])
        weights[seed_type] = (
            epsilon * cost * baseline_rate / (identity_cost * seed_rates[seed_type])
        )
    return weights


def derive_relay_rates(
    max_circuit_rate: float, identity_cost: float, seed_costs: Mapping[str, float]
) -> Dict[str, float]:
    """
    Relay issuance rates: q_i = 3 * c_i * T / lambda

    A circuit rate of 0 closes the network and yields q_i = 0.
    """
    if max_circuit_rate < 0:
        raise PolicyError("max_circuit_rate cannot be negative", "max_circuit_rate")
    _require_positive("identity_cost", identity_cost)
    rates = {}
    for seed_type, cost in seed_costs.items():
        _require_positive(f"seed_costs.{seed_type}", cost)
        rates[seed_type] = 3 * cost * max_circuit_rate / identity_cost
    return rates


@dataclass(frozen=True)
class SitePolicy:
    """Site policy parameters; weights default to the permissive equality"""

    epsilon: float
    baseline_rate: float
    identity_cost: float
    seed_costs: Dict[str, float]
    seed_rates: Dict[str, float]
    weights: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        derived = derive_site_weights(
            self.epsilon,
            self.baseline_rate,
            self.identity_cost,
            self.seed_costs,
            self.seed_rates,
        )
        if not self.weights:
            object.__setattr__(self, "weights", derived)
            return
        for seed_type, w in self.weights.items():
            limit = derived.get(seed_type)
            if limit is None or w <= 0 or w > limit * (1 + BOUND_SLACK):
                raise PolicyError(
                    f"Weight for {seed_type} must lie in (0, {limit}]", seed_type
                )

    def to_dict(self) -> Dict[str, object]:
        return {
            "epsilon": self.epsilon,
            "baseline_rate": self.baseline_rate,
            "identity_cost": self.identity_cost,
            "seed_costs": dict(self.seed_costs),
            "seed_rates": dict(self.seed_rates),
            "weights": dict(self.weights),
        }


@dataclass(frozen=True)
class CircuitPolicy:
    """Network-wide circuit policy: T circuits per interval per client"""

    max_circuit_rate: float
    identity_cost: float
    seed_costs: Dict[str, float]
    interval_s: float = NORMALIZATION_INTERVAL_S

    @property
    def relay_rates(self) -> Dict[str, float]:
        return derive_relay_rates(self.max_circuit_rate, self.identity_cost, self.seed_costs)

    def to_dict(self) -> Dict[str, object]:
        return {
            "max_circuit_rate": self.max_circuit_rate,
            "identity_cost": self.identity_cost,
            "seed_costs": dict(self.seed_costs),
            "interval_s": self.interval_s,
            "relay_rates": self.relay_rates,
        }


@dataclass(frozen=True)
class AdversaryStrategy:
    """
    How an adversary splits its budget across seed types

    Attributes:
        alphas: Budget fraction per seed type, on the simplex
        budget: Total spend
        true_costs: Actual market cost c_i' per seed type
    """

    alphas: Dict[str, float]
    budget: float
    true_costs: Dict[str, float]

    def __post_init__(self) -> None:
        if any(a < 0 or a > 1 for a in self.alphas.values()):
            raise PolicyError("Every alpha must lie in [0, 1]", "alphas")
        if abs(math.fsum(self.alphas.values()) - 1.0) > SIMPLEX_TOLERANCE:
            raise PolicyError("Alphas must sum to 1", "alphas")
        _require_positive("budget", self.budget)
        for seed_type in self.alphas:
            if seed_type not in self.true_costs:
                raise PolicyError(f"No true cost for seed type {seed_type}", seed_type)
            _require_positive(f"true_costs.{seed_type}", self.true_costs[seed_type])


def adversary_rate(policy: SitePolicy, strategy: AdversaryStrategy) -> float:
    """
    Normalized adversary request rate r_a

    The adversary's Tor request rate, sum_i (alpha_i B / c_i') r_i w_i, is
    divided by the non-Tor rate the same budget buys, B / lambda * O.
    """
    tor_rate = math.fsum(
        (alpha * strategy.budget / strategy.true_costs[s])
        * policy.seed_rates[s]
        * policy.weights[s]
        for s, alpha in strategy.alphas.items()
    )
    return tor_rate / (strategy.budget / policy.identity_cost * policy.baseline_rate)


def two_seed_true_costs(policy: SitePolicy, k: float) -> Dict[str, float]:
    """True costs c_0' = c_0 and c_1' = c_0' / k for the first two seed types"""
    _require_positive("k", k)
    seeds = list(policy.seed_costs)[:2]
    if len(seeds) < 2:
        raise PolicyError("A cost-ratio sweep needs two seed types", "seed_costs")
    base = policy.seed_costs[seeds[0]]
    return {seeds[0]: base, seeds[1]: base / k}


@dataclass(frozen=True)
class ThetaBoundResult:
    max_rate: float
    bound: float
    argmax_alpha0: float
    profile: List[float]


def verify_theta_bound(
    policy: SitePolicy, k: float, resolution: int = 100, budget: float = 1.0
) -> ThetaBoundResult:
    """
    Grid-search r_a over the two-seed simplex

    Args:
        policy: Site policy with at least two seed types
        k: True-cost ratio c_0' / c_1'
        resolution: Grid points along the simplex edge (at least 100)
        budget: Adversary budget (r_a does not depend on it)

    Returns:
        ThetaBoundResult with the maximum r_a and the eps * max(1, k) bound

    Raises:
        PolicyError: The bound is violated or the grid is too coarse
    """
    if resolution < 100:
        raise PolicyError("Grid resolution must be at least 100", "resolution")
    costs = two_seed_true_costs(policy, k)
    s0, s1 = list(costs)
    per_unit = np.array(
        [
            policy.seed_rates[s] * policy.weights[s] / costs[s]
            for s in (s0, s1)
        ]
    )
    alpha0 = np.linspace(0.0, 1.0, resolution)
    tor_rate = budget * (alpha0 * per_unit[0] + (1.0 - alpha0) * per_unit[1])
    profile = tor_rate / (budget / policy.identity_cost * policy.baseline_rate)
    best = int(np.argmax(profile))
    bound = policy.epsilon * max(1.0, k)
    max_rate = float(profile[best])
    if max_rate > bound * (1 + BOUND_SLACK):
        raise PolicyError(f"r_a = {max_rate} exceeds the bound {bound}", "k")
    return ThetaBoundResult(max_rate, bound, float(alpha0[best]), profile.tolist())


def anonymity_degree(n_upgraded: int, n_total: int) -> float:
    """
    Degree of anonymity d = log2(N_T) / log2(N)

    Raises:
        PolicyError: N < 2, N_T < 1 or N_T > N
    """
    if n_total < 2:
        raise PolicyError("N must be at least 2", "n_total")
    if not 1 <= n_upgraded <= n_total:
        raise PolicyError("N_T must lie in [1, N]", "n_upgraded")
    return math.log2(n_upgraded) / math.log2(n_total)


def load_policy_file(path: Union[str, Path]) -> Union[SitePolicy, CircuitPolicy]:
    """
    Load a policy from YAML

    A file with a `site` section yields a SitePolicy, a `tor` section a
    CircuitPolicy. Keys match the dataclass field names.
    """
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    try:
        if "site" in data:
            section = data["site"]
            return SitePolicy(
                epsilon=float(section["epsilon"]),
                baseline_rate=float(section["baseline_rate"]),
                identity_cost=float(section["identity_cost"]),
                seed_costs={str(k): float(v) for k, v in section["seed_costs"].items()},
                seed_rates={str(k): float(v) for k, v in section["seed_rates"].items()},
                weights={str(k): float(v) for k, v in section.get("weights", {}).items()},
            )
        if "tor" in data:
            section = data["tor"]
            return CircuitPolicy(
                max_circuit_rate=float(section["max_circuit_rate"]),
                identity_cost=float(section["identity_cost"]),
                seed_costs={str(k): float(v) for k, v in section["seed_costs"].items()},
                interval_s=float(section.get("interval_s", NORMALIZATION_INTERVAL_S)),
            )
    except (KeyError, TypeError, ValueError) as e:
        raise PolicyError(f"Malformed policy file {path}: {e}") from e
    raise PolicyError(f"Policy file {path} needs a 'site' or 'tor' section")


def default_site_policy(
    epsilon: float = 0.1,
    baseline_rate: float = 100.0,
    identity_cost: float = 1.0,
    seed_rate: float = 24.0,
    seed_types: Optional[List[str]] = None,
) -> SitePolicy:
    """Two seed types priced at lambda, each issuing seed_rate per interval"""
    types = seed_types or ["captcha", "puzzle"]
    return SitePolicy(
        epsilon=epsilon,
        baseline_rate=baseline_rate,
        identity_cost=identity_cost,
        seed_costs={t: identity_cost for t in types},
        seed_rates={t: seed_rate for t in types},
    )
