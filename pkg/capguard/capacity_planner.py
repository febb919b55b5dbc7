"""
AA Capacity Planner

Back-of-the-envelope sizing of access-authority signing capacity.
"""

import math
from dataclasses import asdict, dataclass
from typing import Dict

from .exceptions import PolicyError

CAPS_PER_CIRCUIT = 3
DEFAULT_SIGN_COST_S = 0.00023
DEFAULT_PSEUDONYM_COST_S = 0.000032

# absorbs float noise such as 11.000000000000002 before rounding up
_CEIL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CapacityPlan:
    """Sizing result"""

    clients: float
    requests_per_s: float
    per_op_cost_s: float
    cores: int

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def cores_for_rate(requests_per_s: float, per_op_cost_s: float) -> int:
    """Cores needed to sign requests_per_s at per_op_cost_s each"""
    if requests_per_s < 0 or per_op_cost_s <= 0:
        raise PolicyError("Request rate must be non-negative and cost positive")
    return max(0, math.ceil(requests_per_s * per_op_cost_s - _CEIL_TOLERANCE))


def plan_capacity(
    clients: float,
    streams_per_interval: float,
    circuits_per_interval: float,
    interval_s: float,
    per_op_cost_s: float,
) -> CapacityPlan:
    """
    Size the AA for a client population

    requests_per_s = clients * (streams + 3 * circuits) / interval and
    cores = ceil(requests_per_s * per_op_cost_s).

    Args:
        clients: Number of clients (zero allowed)
        streams_per_interval: Site capabilities per client per interval
        circuits_per_interval: Circuits per client per interval
        interval_s: Interval length in seconds
        per_op_cost_s: CPU seconds per signing operation

    Returns:
        CapacityPlan

    Raises:
        PolicyError: Negative counts or non-positive interval or cost
    """
    if clients < 0 or streams_per_interval < 0 or circuits_per_interval < 0:
        raise PolicyError("Client, stream and circuit counts cannot be negative")
    if interval_s <= 0:
        raise PolicyError("interval_s must be positive", "interval_s")
    requests_per_s = (
        clients * (streams_per_interval + CAPS_PER_CIRCUIT * circuits_per_interval) / interval_s
    )
    return CapacityPlan(
        clients=clients,
        requests_per_s=requests_per_s,
        per_op_cost_s=per_op_cost_s,
        cores=cores_for_rate(requests_per_s, per_op_cost_s),
    )


def plan_botnet_capacity(
    bots: float,
    clients: float = 710_000,
    site_rate: float = 24,
    relay_rate: float = 12,
    interval_s: float = 600,
    sign_cost_s: float = DEFAULT_SIGN_COST_S,
    pseudonym_cost_s: float = DEFAULT_PSEUDONYM_COST_S,
) -> CapacityPlan:
    """
    Size the AA for a botnet whose members request at the per-seed ceilings

    Every bot and client drains both buckets (site_rate + relay_rate per
    interval). Each request costs one signature plus one pseudonym check.
    """
    if bots < 0 or clients < 0:
        raise PolicyError("Population sizes cannot be negative")
    if interval_s <= 0:
        raise PolicyError("interval_s must be positive", "interval_s")
    requests_per_s = (bots + clients) * (site_rate + relay_rate) / interval_s
    per_op = sign_cost_s + pseudonym_cost_s
    return CapacityPlan(
        clients=bots + clients,
        requests_per_s=requests_per_s,
        per_op_cost_s=per_op,
        cores=cores_for_rate(requests_per_s, per_op),
    )
