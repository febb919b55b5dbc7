"""
Relay Consensus

Relay models, consensus CSV files and bandwidth-weighted path selection.

Selection follows Tor's position weighting: a relay's chance of filling a
position is its bandwidth times the position weight for its flag class,
normalized over the relays eligible for that position. Exits are picked
first, then guards, then middles, redrawing until the three are distinct.
"""

import bisect
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from .exceptions import ConfigError, SimulationError

logger = logging.getLogger(__name__)

GUARD = "guard"
EXIT = "exit"
POSITIONS = ("g", "m", "e")
CONSENSUS_COLUMNS = ["fingerprint", "weight", "flags", "capacity"]
# Redraws before a path is declared impossible
MAX_PATH_DRAWS = 1000

# Position weights keyed like the consensus bandwidth-weights line
DEFAULT_BW_WEIGHTS: Dict[str, float] = {
    "Wgg": 1.0,
    "Wgd": 1.0,
    "Wgm": 1.0,
    "Wmg": 1.0,
    "Wmm": 1.0,
    "Wme": 1.0,
    "Wmd": 1.0,
    "Weg": 1.0,
    "Wee": 1.0,
    "Wed": 1.0,
    "Wem": 1.0,
}


@dataclass(frozen=True)
class RelayModel:
    """
    One relay of the simulated network

    Attributes:
        fingerprint: Relay identifier
        bandwidth_weight: Consensus weight used for path selection
        capacity: Onionskins processed per second
        guard: Carries the Guard flag
        exit: Carries the Exit flag
        queue_bound: Most creations held at once (in service plus waiting)
    """

    fingerprint: str
    bandwidth_weight: float
    capacity: float
    guard: bool = False
    exit: bool = False
    queue_bound: int = 10

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ConfigError(f"Relay {self.fingerprint} needs a positive capacity")
        if self.bandwidth_weight < 0:
            raise ConfigError(f"Relay {self.fingerprint} has a negative weight")
        if self.queue_bound < 1:
            raise ConfigError(f"Relay {self.fingerprint} needs a queue bound of at least 1")

    @property
    def flags(self) -> List[str]:
        return [f for f, on in ((GUARD, self.guard), (EXIT, self.exit)) if on]

    def eligible(self, position: str) -> bool:
        if position == "g":
            return self.guard
        if position == "e":
            return self.exit
        return True


def get_bw_weight(relay: RelayModel, position: str, bw_weights: Dict[str, float]) -> float:
    """
    Weight applied to a relay's bandwidth for a position

    Args:
        relay: Relay
        position: 'g' for guard, 'm' for middle, 'e' for exit
        bw_weights: Position weights (Wgg, Wgd, ...)
    """
    if position == "g":
        if relay.guard and relay.exit:
            return bw_weights["Wgd"]
        if relay.guard:
            return bw_weights["Wgg"]
        if not relay.exit:
            return bw_weights["Wgm"]
        raise ValueError("Wge weight does not exist.")
    if position == "m":
        if relay.guard and relay.exit:
            return bw_weights["Wmd"]
        if relay.guard:
            return bw_weights["Wmg"]
        if relay.exit:
            return bw_weights["Wme"]
        return bw_weights["Wmm"]
    if position == "e":
        if relay.guard and relay.exit:
            return bw_weights["Wed"]
        if relay.guard:
            return bw_weights["Weg"]
        if relay.exit:
            return bw_weights["Wee"]
        return bw_weights["Wem"]
    raise ValueError(f"get_bw_weight does not support position {position}.")


class PathSelector:
    """Cumulative position weights over one consensus, reused across draws"""

    def __init__(
        self,
        consensus: Sequence[RelayModel],
        bw_weights: Optional[Dict[str, float]] = None,
    ) -> None:
        """
        Args:
            consensus: Relays
            bw_weights: Position weights (all 1 by default)

        Raises:
            SimulationError: Fewer than three relays, or no positive-weight
                relay for some position
        """
        self.relays = list(consensus)
        self.bw_weights = dict(bw_weights or DEFAULT_BW_WEIGHTS)
        if len(self.relays) < 3:
            raise SimulationError(
                f"Path selection needs 3 relays, got {len(self.relays)}", "consensus"
            )
        self._candidates: Dict[str, List[int]] = {}
        self._cumulative: Dict[str, List[float]] = {}
        self.probabilities: Dict[str, np.ndarray] = {}
        for position in POSITIONS:
            indices = [i for i, r in enumerate(self.relays) if r.eligible(position)]
            weights = [
                self.relays[i].bandwidth_weight
                * get_bw_weight(self.relays[i], position, self.bw_weights)
                for i in indices
            ]
            total = float(sum(weights))
            if not indices or total <= 0:
                raise SimulationError(f"No relay can fill position '{position}'", "consensus")
            cumulative: List[float] = []
            running = 0.0
            for w in weights:
                running += w / total
                cumulative.append(running)
            self._candidates[position] = indices
            self._cumulative[position] = cumulative
            probs = np.zeros(len(self.relays))
            probs[indices] = np.asarray(weights) / total
            self.probabilities[position] = probs

    def pick(self, position: str, rng: np.random.Generator) -> int:
        """Index of a relay drawn for one position"""
        cumulative = self._cumulative[position]
        i = bisect.bisect_left(cumulative, rng.random())
        return self._candidates[position][min(i, len(cumulative) - 1)]

    def select_indices(self, rng: np.random.Generator) -> Tuple[int, int, int]:
        """(guard, middle, exit) indices of three distinct relays"""
        for _ in range(MAX_PATH_DRAWS):
            exit_i = self.pick("e", rng)
            guard_i = self.pick("g", rng)
            if guard_i == exit_i:
                continue
            middle_i = self.pick("m", rng)
            if middle_i in (guard_i, exit_i):
                continue
            return guard_i, middle_i, exit_i
        raise SimulationError("Could not draw three distinct relays", "consensus")

    def load_shares(self) -> np.ndarray:
        """Expected number of path slots each relay fills per circuit"""
        return sum(self.probabilities[p] for p in POSITIONS)


def select_path(
    consensus: Sequence[RelayModel],
    rng: np.random.Generator,
    bw_weights: Optional[Dict[str, float]] = None,
) -> Tuple[RelayModel, RelayModel, RelayModel]:
    """
    Draw a (guard, middle, exit) path

    Args:
        consensus: Relays
        rng: Random generator
        bw_weights: Position weights

    Returns:
        Three distinct relays

    Raises:
        SimulationError: The consensus cannot supply three distinct flagged relays
    """
    selector = PathSelector(consensus, bw_weights)
    g, m, e = selector.select_indices(rng)
    return selector.relays[g], selector.relays[m], selector.relays[e]


def synthesize_network(
    n_relays: int = 70,
    seed: int = 0,
    guard_fraction: float = 0.4,
    exit_fraction: float = 0.3,
    sigma: float = 4.5,
    queue_bound: int = 10,
    weight_sigma: float = 0.5,
) -> List[RelayModel]:
    """
    Synthetic consensus with relative capacities

    Capacities are load_share * exp(sigma * z). Within each flag class the
    relays are put in random order and z is the standard normal quantile
    at the midpoint of each relay's slice of the class's bandwidth, so every
    position sees close to a normal spread of z however few relays it has.
    Multiply by a calibrated factor (see fluid_model.calibrate_kappa) to get
    onionskins per second.

    Args:
        n_relays: Number of relays
        seed: RNG seed
        guard_fraction: Share of relays flagged Guard
        exit_fraction: Share of relays flagged Exit
        sigma: Spread of the log-normal capacity multiplier
        queue_bound: Per-relay bound on creations held
        weight_sigma: Spread of the log-normal bandwidth weights

    Returns:
        Relay list
    """
    if n_relays < 3:
        raise ConfigError("A network needs at least 3 relays")
    rng = np.random.default_rng(seed)
    weights = rng.lognormal(mean=0.0, sigma=weight_sigma, size=n_relays)
    n_guard = max(1, round(n_relays * guard_fraction))
    n_exit = max(1, round(n_relays * exit_fraction))
    order = rng.permutation(n_relays)
    guards = set(order[:n_guard].tolist())
    # exits overlap the guards by one relay in four
    overlap = n_exit // 4
    exits = set(order[n_guard - overlap : n_guard - overlap + n_exit].tolist())
    z = np.zeros(n_relays)
    for flag_class in ((True, True), (True, False), (False, True), (False, False)):
        members = [
            i
            for i in rng.permutation(n_relays).tolist()
            if (i in guards, i in exits) == flag_class
        ]
        if not members:
            continue
        w = weights[members]
        midpoints = (np.cumsum(w) - w / 2) / w.sum()
        z[members] = norm.ppf(midpoints)
    relays = [
        RelayModel(
            fingerprint=f"{i:040X}",
            bandwidth_weight=float(weights[i]),
            capacity=1.0,
            guard=i in guards,
            exit=i in exits,
            queue_bound=queue_bound,
        )
        for i in range(n_relays)
    ]
    shares = PathSelector(relays).load_shares()
    return [
        replace(relay, capacity=float(shares[i] * np.exp(sigma * z[i])))
        for i, relay in enumerate(relays)
    ]


def scale_capacities(relays: Sequence[RelayModel], factor: float) -> List[RelayModel]:
    if factor <= 0:
        raise ConfigError("Capacity factor must be positive")
    return [replace(r, capacity=r.capacity * factor) for r in relays]


def load_consensus(path: Union[str, Path], queue_bound: int = 10) -> List[RelayModel]:
    """
    Read a consensus CSV (fingerprint, weight, flags, capacity)

    Flags are space-separated (for example "guard exit").

    Raises:
        ConfigError: Missing columns or invalid values, with the CSV line
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"fingerprint": str, "flags": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ConfigError(f"Cannot read consensus {path}: {e}", path=str(path)) from e
    missing = [c for c in CONSENSUS_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigError(f"Consensus lacks columns: {', '.join(missing)}", path=str(path))
    frame["flags"] = frame["flags"].fillna("")
    relays = []
    for row_number, row in enumerate(frame.itertuples(index=False), start=2):
        flags = {f.lower() for f in str(row.flags).split()}
        try:
            relays.append(
                RelayModel(
                    fingerprint=str(row.fingerprint),
                    bandwidth_weight=float(row.weight),
                    capacity=float(row.capacity),
                    guard=GUARD in flags,
                    exit=EXIT in flags,
                    queue_bound=queue_bound,
                )
            )
        except (ConfigError, ValueError) as e:
            raise ConfigError(str(e), path=str(path), line=row_number) from e
    logger.info("Loaded %d relays from %s", len(relays), path)
    return relays


def save_consensus(relays: Sequence[RelayModel], path: Union[str, Path]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [
            {
                "fingerprint": r.fingerprint,
                "weight": r.bandwidth_weight,
                "flags": " ".join(r.flags),
                "capacity": r.capacity,
            }
            for r in relays
        ],
        columns=CONSENSUS_COLUMNS,
    )
    frame.to_csv(path, index=False)
    return str(path)
