"""
Gatekeeper

Capability validation and spending, shared by the site middleware and the
relay gatekeeper.

A capability is valid if (i) it carries an authentic signature from a
non-blacklisted AA, (ii) its scope is the gatekeeper's own domain or relay
fingerprint (any customer domain in CDN mode), (iii) it is bound to the
current epoch value and (iv) it has not been nullified.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from random import Random
from typing import Callable, Dict, FrozenSet, Iterable, Optional

from .blind_signature import AADirectory, verify_signature
from .bloom_filter import BloomFilter
from .epoch_beacon import EpochBeacon
from .exceptions import TokenEncodingError, UnknownAuthorityError
from .tokens import Capability, TokenKind, domain_scope, relay_scope

logger = logging.getLogger(__name__)

RULE_SIGNATURE = "i"
RULE_SCOPE = "ii"
RULE_EPOCH = "iii"
RULE_NULLIFIED = "iv"

REASON_MALFORMED = "malformed"
REASON_MISSING = "missing_capability"
REASON_BAD_SIGNATURE = "invalid_signature"
REASON_UNKNOWN_AA = "unknown_aa"
REASON_BLACKLISTED = "blacklisted_aa"
REASON_WRONG_KIND = "wrong_kind"
REASON_SCOPE = "scope_mismatch"
REASON_EPOCH = "stale_epoch"
REASON_NULLIFIED = "nullified"
REASON_DECLINED = "declined"


@dataclass(frozen=True)
class Verdict:
    """Outcome of validate() or Gatekeeper.check()"""

    accepted: bool
    rule: Optional[str] = None
    reason: Optional[str] = None
    nullified: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {
            "accepted": self.accepted,
            "rule": self.rule,
            "reason": self.reason,
            "nullified": self.nullified,
        }


ACCEPT = Verdict(True)


class DuplicateSuppressor:
    """
    Filters of spent and declined capability digests for one epoch

    Both filters are cleared when the epoch label changes.
    """

    def __init__(self, expected_items: int = 100_000, false_positive_rate: float = 1e-4) -> None:
        self.expected_items = expected_items
        self.false_positive_rate = false_positive_rate
        self.spent = BloomFilter(expected_items, false_positive_rate)
        self.declined = BloomFilter(expected_items, false_positive_rate)
        self.epoch_index: Optional[int] = None
        self.lock = threading.RLock()

    @classmethod
    def for_baseline(
        cls,
        baseline_rate: float,
        interval_s: float,
        epoch_length_s: float,
        false_positive_rate: float = 1e-4,
    ) -> "DuplicateSuppressor":
        """
        Filters sized for one epoch of spending at a baseline rate

        Args:
            baseline_rate: Requests per interval the policy budgets for
            interval_s: Normalization interval in seconds
            epoch_length_s: Epoch length in seconds
            false_positive_rate: Target rate f per filter

        Returns:
            DuplicateSuppressor with E = baseline_rate x intervals per epoch
        """
        if baseline_rate <= 0 or interval_s <= 0 or epoch_length_s <= 0:
            raise ValueError("baseline_rate, interval_s and epoch_length_s must be positive")
        expected = math.ceil(baseline_rate * epoch_length_s / interval_s)
        return cls(expected_items=expected, false_positive_rate=false_positive_rate)

    def rotate(self, epoch_index: int) -> bool:
        """
        Clear both filters when the epoch changed

        Returns:
            True if a reset happened
        """
        with self.lock:
            if self.epoch_index == epoch_index:
                return False
            if self.epoch_index is not None:
                logger.info(
                    "Epoch %d -> %d: clearing %d spent and %d declined digests",
                    self.epoch_index,
                    epoch_index,
                    len(self.spent),
                    len(self.declined),
                )
            self.spent.clear()
            self.declined.clear()
            self.epoch_index = epoch_index
            return True

    def is_nullified(self, digest: bytes) -> bool:
        return digest in self.spent or digest in self.declined


@dataclass
class ValidationRules:
    """Everything validate() checks a capability against"""

    kind: TokenKind
    expected_scopes: FrozenSet[bytes]
    directory: AADirectory
    beacon: EpochBeacon
    suppressor: DuplicateSuppressor = field(default_factory=DuplicateSuppressor)

    @classmethod
    def for_site(
        cls,
        domain: str,
        directory: AADirectory,
        beacon: EpochBeacon,
        customer_domains: Optional[Iterable[str]] = None,
        suppressor: Optional[DuplicateSuppressor] = None,
    ) -> "ValidationRules":
        """
        Rules for a site; with customer_domains the site runs in CDN mode and
        accepts any of those domains
        """
        domains = list(customer_domains) if customer_domains else [domain]
        return cls(
            kind=TokenKind.SITE,
            expected_scopes=frozenset(domain_scope(d) for d in domains),
            directory=directory,
            beacon=beacon,
            suppressor=suppressor or DuplicateSuppressor(),
        )

    @classmethod
    def for_relay(
        cls,
        fingerprint: bytes,
        directory: AADirectory,
        beacon: EpochBeacon,
        suppressor: Optional[DuplicateSuppressor] = None,
    ) -> "ValidationRules":
        return cls(
            kind=TokenKind.RELAY,
            expected_scopes=frozenset([relay_scope(fingerprint)]),
            directory=directory,
            beacon=beacon,
            suppressor=suppressor or DuplicateSuppressor(),
        )


def validate(cap: Capability, rules: ValidationRules, now: Optional[float] = None) -> Verdict:
    """
    Check rules (i) to (iv), stopping at the first failure

    Args:
        cap: Decoded capability
        rules: Validation rules of this gatekeeper
        now: Clock value (defaults to the beacon's clock)

    Returns:
        Verdict
    """
    now = rules.beacon.clock() if now is None else now
    epoch = rules.beacon.epoch_at(now)
    rules.suppressor.rotate(epoch.index)

    if cap.kind != rules.kind:
        return Verdict(False, RULE_SIGNATURE, REASON_WRONG_KIND)
    fingerprint = cap.payload.aa_fingerprint
    if rules.directory.is_blacklisted(fingerprint):
        return Verdict(False, RULE_SIGNATURE, REASON_BLACKLISTED)
    try:
        authentic = verify_signature(cap, rules.directory, now)
    except UnknownAuthorityError:
        return Verdict(False, RULE_SIGNATURE, REASON_UNKNOWN_AA)
    if not authentic:
        return Verdict(False, RULE_SIGNATURE, REASON_BAD_SIGNATURE)
    if cap.payload.scope not in rules.expected_scopes:
        return Verdict(False, RULE_SCOPE, REASON_SCOPE)
    if cap.payload.epoch_value != epoch.value:
        return Verdict(False, RULE_EPOCH, REASON_EPOCH)
    if rules.suppressor.is_nullified(cap.digest()):
        return Verdict(False, RULE_NULLIFIED, REASON_NULLIFIED, nullified=True)
    return ACCEPT


@dataclass(frozen=True)
class SpendResult:
    allowed: bool
    nullified: bool


def spend(
    cap: Capability, w_i: float, rng: Random, suppressor: DuplicateSuppressor
) -> SpendResult:
    """
    Apply the per-capability request allowance w_i

    w_i = 1: one request, then nullified. w_i > 1: allowed until nullified,
    each use nullifying with probability 1/w_i. w_i < 1: on first sight the
    capability is accepted with probability w_i for exactly one request; a
    declined capability stays declined.

    Args:
        cap: Capability that passed rules (i) to (iii)
        w_i: Requests per capability for the issuing seed type
        rng: Random source
        suppressor: Filters of the current epoch

    Returns:
        SpendResult
    """
    if w_i <= 0:
        raise ValueError("w_i must be positive")
    digest = cap.digest()
    with suppressor.lock:
        if suppressor.is_nullified(digest):
            return SpendResult(False, True)
        if w_i == 1:
            suppressor.spent.add(digest)
            return SpendResult(True, True)
        if w_i > 1:
            if rng.random() < 1.0 / w_i:
                suppressor.spent.add(digest)
                return SpendResult(True, True)
            return SpendResult(True, False)
        if rng.random() < w_i:
            suppressor.spent.add(digest)
            return SpendResult(True, True)
        suppressor.declined.add(digest)
        return SpendResult(False, True)


class Gatekeeper:
    """Validate-then-spend front end for one site or relay"""

    def __init__(
        self,
        rules: ValidationRules,
        weights: Optional[Dict[str, float]] = None,
        aa_seed_types: Optional[Dict[bytes, str]] = None,
        default_weight: float = 1.0,
        rng: Optional[Random] = None,
        clock: Optional[Callable[[], float]] = None,
    ) -> None:
        """
        Initialize gatekeeper

        Args:
            rules: Validation rules
            weights: w_i per seed type
            aa_seed_types: Seed type accepted by each AA fingerprint
            default_weight: Weight for AAs of unknown seed type
            rng: Random source for nullification draws
            clock: Time source (defaults to the beacon's clock)
        """
        self.rules = rules
        self.weights = dict(weights or {})
        self.aa_seed_types = dict(aa_seed_types or {})
        self.default_weight = default_weight
        self.rng = rng or Random()
        self.clock = clock or rules.beacon.clock

    def seed_type_of(self, cap: Capability) -> Optional[str]:
        return self.aa_seed_types.get(cap.payload.aa_fingerprint)

    def weight_for(self, cap: Capability) -> float:
        seed_type = self.seed_type_of(cap)
        if seed_type is None:
            return self.default_weight
        return self.weights.get(seed_type, self.default_weight)

    def check(self, cap: Capability) -> Verdict:
        """Validate and, if valid, spend one request"""
        label = cap.digest().hex()[:16]
        verdict = validate(cap, self.rules, self.clock())
        if not verdict.accepted:
            logger.debug("Rejected %s: rule (%s) %s", label, verdict.rule, verdict.reason)
            return verdict
        result = spend(cap, self.weight_for(cap), self.rng, self.rules.suppressor)
        if not result.allowed:
            reason = REASON_DECLINED if self.weight_for(cap) < 1 else REASON_NULLIFIED
            logger.debug("Rejected %s: rule (%s) %s", label, RULE_NULLIFIED, reason)
            return Verdict(False, RULE_NULLIFIED, reason, nullified=True)
        logger.debug("Admitted %s (nullified: %s)", label, result.nullified)
        return Verdict(True, nullified=result.nullified)

    def check_header(self, header: Optional[str]) -> Verdict:
        """Decode an X-Capability header value and check it"""
        if not header:
            return Verdict(False, None, REASON_MISSING)
        try:
            cap = Capability.from_header(header)
        except TokenEncodingError:
            return Verdict(False, None, REASON_MALFORMED)
        return self.check(cap)
