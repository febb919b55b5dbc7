"""
Puzzle System

Quorum-released puzzle seeds, client-side solving, AA-side stub verification
and the schedule arithmetic that bounds how much CPU a solver can burn.

A period of length P_r starts with the release of a seed signed by a quorum of
directory authorities. Stubs are accepted only during the first P_a seconds
of the period; the rest is cool-down. A stub is a pair (r, s) whose hash with
the seed and the target AA fingerprint falls under p_p of the hash range.
"""

import hashlib
import logging
import math
import secrets
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from random import Random
from typing import Callable, Dict, List, Optional, Sequence, Set

from Crypto.Hash import SHA256
from Crypto.PublicKey import RSA
from Crypto.Signature import pkcs1_15

from .exceptions import PuzzleError, TokenEncodingError
from .tokens import FINGERPRINT_LEN, NONCE_LEN, b64url_decode, b64url_encode

logger = logging.getLogger(__name__)

HASH_BITS = 512
HASH_MAX = (1 << HASH_BITS) - 1
SEED_DIGEST_LEN = 64
SOLUTION_LEN = 16
STUB_LEN = SEED_DIGEST_LEN + NONCE_LEN + SOLUTION_LEN + FINGERPRINT_LEN

DEFAULT_DA_COUNT = 9
DEFAULT_QUORUM = 5
DA_KEY_BITS = 1024

# Rejection codes, one per verification rule
RULE_WINDOW = "i"
RULE_SEED = "ii"
RULE_FINGERPRINT = "iii"
RULE_THRESHOLD = "iv"
RULE_SPENT = "v"

RULE_REASONS = {
    RULE_WINDOW: "outside_acceptance_window",
    RULE_SEED: "stale_seed",
    RULE_FINGERPRINT: "wrong_aa",
    RULE_THRESHOLD: "threshold_not_met",
    RULE_SPENT: "stub_spent",
}


@dataclass(frozen=True)
class PuzzleSchedule:
    """Seed release period P_r, acceptance period P_a and latency allowance P_c"""

    release_period_s: float = 300.0
    acceptance_period_s: float = 60.0
    latency_allowance_s: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.acceptance_period_s < self.release_period_s:
            raise PuzzleError(
                "Acceptance period must be positive and shorter than the release period"
            )
        if self.latency_allowance_s < 0:
            raise PuzzleError("Latency allowance cannot be negative")

    @property
    def cool_down_s(self) -> float:
        return self.release_period_s - self.acceptance_period_s

    def period_index(self, now: float) -> int:
        return int(now // self.release_period_s)

    def period_start(self, index: int) -> float:
        return index * self.release_period_s

    def in_acceptance(self, now: float) -> bool:
        offset = now - self.period_start(self.period_index(now))
        return offset < self.acceptance_period_s

    def solving_deadline(self, index: int) -> float:
        """Last moment a client should still hash in period index"""
        return (
            self.period_start(index) + self.acceptance_period_s - self.latency_allowance_s
        )

    def cpu_bound(self) -> float:
        """Upper bound on the fraction of wall time a solver spends hashing"""
        return (self.acceptance_period_s - self.latency_allowance_s) / self.release_period_s


# Seed release


@dataclass(frozen=True)
class DAKey:
    """Local stand-in for one directory authority's signing key"""

    da_id: int
    key: RSA.RsaKey = field(repr=False)

    @property
    def public_pem(self) -> str:
        return bytes(self.key.publickey().export_key("PEM")).decode("ascii")


class DAKeySet:
    """All directory authority keys, simulated in-process"""

    def __init__(self, keys: Sequence[DAKey]) -> None:
        self.keys = {k.da_id: k for k in keys}

    @classmethod
    def generate(cls, count: int = DEFAULT_DA_COUNT, bits: int = DA_KEY_BITS) -> "DAKeySet":
        return cls([DAKey(i, RSA.generate(bits)) for i in range(count)])

    @classmethod
    def from_public_pems(cls, pems: Dict[int, str]) -> "DAKeySet":
        return cls([DAKey(int(i), RSA.import_key(pem)) for i, pem in pems.items()])

    def public_pems(self) -> Dict[int, str]:
        return {da_id: k.public_pem for da_id, k in self.keys.items()}

    def __len__(self) -> int:
        return len(self.keys)


def _piece_message(nonce: bytes, t_s: int) -> bytes:
    return nonce + t_s.to_bytes(8, "big")


@dataclass(frozen=True)
class SeedPiece:
    """One DA's contribution to a puzzle seed"""

    nonce_ni: bytes
    t_s: int
    signature: bytes
    da_id: int

    @classmethod
    def sign(cls, da_key: DAKey, t_s: int, nonce: Optional[bytes] = None) -> "SeedPiece":
        nonce = nonce if nonce is not None else secrets.token_bytes(NONCE_LEN)
        digest = SHA256.new(_piece_message(nonce, t_s))
        return cls(nonce, t_s, pkcs1_15.new(da_key.key).sign(digest), da_key.da_id)

    def verify(self, da_keys: DAKeySet) -> bool:
        da_key = da_keys.keys.get(self.da_id)
        if da_key is None:
            return False
        digest = SHA256.new(_piece_message(self.nonce_ni, self.t_s))
        try:
            pkcs1_15.new(da_key.key.publickey()).verify(digest, self.signature)
        except (ValueError, TypeError):
            return False
        return True

    def encode(self) -> bytes:
        return bytes([self.da_id]) + _piece_message(self.nonce_ni, self.t_s) + self.signature

    def to_dict(self) -> Dict[str, object]:
        return {
            "da_id": self.da_id,
            "nonce": b64url_encode(self.nonce_ni),
            "t_s": self.t_s,
            "signature": b64url_encode(self.signature),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "SeedPiece":
        return cls(
            nonce_ni=b64url_decode(str(data["nonce"])),
            t_s=int(data["t_s"]),  # type: ignore[call-overload]
            signature=b64url_decode(str(data["signature"])),
            da_id=int(data["da_id"]),  # type: ignore[call-overload]
        )


def compute_seed_digest(pieces: Sequence[SeedPiece]) -> bytes:
    """SHA-512 over the pieces sorted by DA id"""
    h = hashlib.sha512()
    for piece in sorted(pieces, key=lambda p: p.da_id):
        h.update(piece.encode())
    return h.digest()


@dataclass(frozen=True)
class PuzzleSeed:
    """Quorum-signed seed of one release period"""

    pieces: tuple  # Tuple[SeedPiece, ...]
    h_k: bytes
    period_index: int
    t_s: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "period_index": self.period_index,
            "t_s": self.t_s,
            "h_k": self.h_k.hex(),
            "pieces": [p.to_dict() for p in self.pieces],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object], da_keys: DAKeySet, quorum: int) -> "PuzzleSeed":
        """
        Rebuild a fetched seed, re-checking every piece

        Raises:
            PuzzleError: Fewer than quorum authentic pieces, or h_k does not
                match the pieces
        """
        raw_pieces: Sequence[Dict[str, object]] = data.get("pieces", [])  # type: ignore[assignment]
        pieces = [SeedPiece.from_dict(p) for p in raw_pieces]
        index = int(data["period_index"])  # type: ignore[call-overload]
        t_s = int(data["t_s"])  # type: ignore[call-overload]
        authentic = {p.da_id: p for p in pieces if p.t_s == t_s and p.verify(da_keys)}
        if len(authentic) < quorum:
            raise PuzzleError(
                f"Only {len(authentic)} authentic seed pieces for period {index}",
                period_index=index,
                pieces=len(authentic),
            )
        ordered = tuple(sorted(authentic.values(), key=lambda p: p.da_id))
        h_k = compute_seed_digest(ordered)
        if "h_k" in data and bytes.fromhex(str(data["h_k"])) != h_k:
            raise PuzzleError("Seed digest does not match its pieces", period_index=index)
        return cls(ordered, h_k, index, t_s)


def assemble_seed(
    pieces: Sequence[SeedPiece],
    da_keys: DAKeySet,
    period_index: int,
    schedule: PuzzleSchedule,
    quorum: int = DEFAULT_QUORUM,
) -> PuzzleSeed:
    """
    Build a seed from candidate pieces

    Pieces with a foreign t_s, a bad signature or a duplicate DA id are left
    out of the set.

    Raises:
        PuzzleError: Fewer than quorum authentic pieces remain
    """
    t_s = int(schedule.period_start(period_index))
    accepted: Dict[int, SeedPiece] = {}
    for piece in pieces:
        if piece.t_s != t_s:
            logger.debug("Dropping piece from DA %d: t_s %d != %d", piece.da_id, piece.t_s, t_s)
            continue
        if piece.da_id in accepted or not piece.verify(da_keys):
            continue
        accepted[piece.da_id] = piece

    if len(accepted) < quorum:
        raise PuzzleError(
            f"Only {len(accepted)} authentic seed pieces for period {period_index}, "
            f"quorum is {quorum}",
            period_index=period_index,
            pieces=len(accepted),
        )
    ordered = tuple(sorted(accepted.values(), key=lambda p: p.da_id))
    return PuzzleSeed(ordered, compute_seed_digest(ordered), period_index, t_s)


def release_seed(
    da_keys: DAKeySet,
    period_index: int,
    schedule: PuzzleSchedule,
    quorum: int = DEFAULT_QUORUM,
    participants: Optional[Sequence[int]] = None,
) -> PuzzleSeed:
    """
    Have the participating DAs sign fresh nonces and assemble the seed

    Args:
        da_keys: DA key set
        period_index: Release period k
        schedule: Puzzle schedule
        quorum: Minimum number of distinct DAs
        participants: DA ids taking part (all by default)

    Returns:
        PuzzleSeed

    Raises:
        PuzzleError: Fewer than quorum participants
    """
    ids = list(participants) if participants is not None else sorted(da_keys.keys)
    t_s = int(schedule.period_start(period_index))
    pieces = [SeedPiece.sign(da_keys.keys[i], t_s) for i in ids]
    return assemble_seed(pieces, da_keys, period_index, schedule, quorum)


# Solving


@dataclass(frozen=True)
class PuzzleStub:
    """Proof that a client solved the puzzle of one seed for one AA"""

    h_k: bytes
    nonce_r: bytes
    solution_s: bytes
    aa_fingerprint: bytes

    def __post_init__(self) -> None:
        for name, value, size in (
            ("h_k", self.h_k, SEED_DIGEST_LEN),
            ("nonce_r", self.nonce_r, NONCE_LEN),
            ("solution_s", self.solution_s, SOLUTION_LEN),
            ("aa_fingerprint", self.aa_fingerprint, FINGERPRINT_LEN),
        ):
            if len(value) != size:
                raise TokenEncodingError(f"{name} must be {size} bytes", name)

    def encode(self) -> bytes:
        return self.h_k + self.nonce_r + self.solution_s + self.aa_fingerprint

    @classmethod
    def decode(cls, data: bytes) -> "PuzzleStub":
        if len(data) != STUB_LEN:
            raise TokenEncodingError(f"Puzzle stub must be {STUB_LEN} bytes", "stub")
        a = SEED_DIGEST_LEN
        b = a + NONCE_LEN
        c = b + SOLUTION_LEN
        return cls(data[:a], data[a:b], data[b:c], data[c:])

    def to_text(self) -> str:
        return b64url_encode(self.encode())

    @classmethod
    def from_text(cls, text: str) -> "PuzzleStub":
        return cls.decode(b64url_decode(text))

    def hash_value(self) -> int:
        return puzzle_hash(self.h_k, self.nonce_r, self.solution_s, self.aa_fingerprint)

    def digest(self) -> str:
        return hashlib.sha256(self.encode()).hexdigest()


def puzzle_hash(h_k: bytes, nonce_r: bytes, solution_s: bytes, fingerprint: bytes) -> int:
    return int.from_bytes(hashlib.sha512(h_k + nonce_r + solution_s + fingerprint).digest(), "big")


def threshold_limit(p_p: float) -> int:
    """
    Smallest integer L with value < L  <=>  value / (2^512 - 1) < p_p

    The comparison is exact (rational), so p_p = 1 accepts every value but the
    all-ones hash and p_p = 0 accepts nothing.
    """
    if not 0 <= p_p <= 1:
        raise PuzzleError(f"p_p must lie in [0, 1]: {p_p}")
    return math.ceil(Fraction(p_p) * HASH_MAX)


def meets_threshold(value: int, p_p: float) -> bool:
    return value < threshold_limit(p_p)


@dataclass
class SolveResult:
    """Outcome of one solve() call"""

    stub: Optional[PuzzleStub]
    attempts: int

    @property
    def solved(self) -> bool:
        return self.stub is not None


def solve(
    seed: PuzzleSeed,
    aa_fingerprint: bytes,
    p_p: float,
    deadline: float,
    clock: Callable[[], float] = time.monotonic,
    rng: Optional[Random] = None,
    max_attempts: Optional[int] = None,
    on_attempt: Optional[Callable[[], None]] = None,
) -> SolveResult:
    """
    Search (r, s) pairs until one meets the threshold or time runs out

    Args:
        seed: Current puzzle seed
        aa_fingerprint: AA the stub will be redeemed at
        p_p: Success probability per attempt
        deadline: Clock value after which the search stops
        clock: Time source compared against deadline
        rng: Random source for r and s (secrets when omitted)
        max_attempts: Optional attempt cap
        on_attempt: Hook called after each hash (used by simulated clocks)

    Returns:
        SolveResult with the stub, or stub=None on timeout
    """
    limit = threshold_limit(p_p)

    def draw() -> bytes:
        if rng is None:
            return secrets.token_bytes(NONCE_LEN)
        return rng.getrandbits(NONCE_LEN * 8).to_bytes(NONCE_LEN, "big")

    nonce_r = draw()
    counter = int.from_bytes(draw(), "big")
    prefix = seed.h_k + nonce_r
    attempts = 0
    while clock() < deadline:
        if max_attempts is not None and attempts >= max_attempts:
            break
        solution = (counter % (1 << (SOLUTION_LEN * 8))).to_bytes(SOLUTION_LEN, "big")
        counter += 1
        attempts += 1
        value = int.from_bytes(
            hashlib.sha512(prefix + solution + aa_fingerprint).digest(), "big"
        )
        if on_attempt is not None:
            on_attempt()
        if value < limit:
            return SolveResult(PuzzleStub(seed.h_k, nonce_r, solution, aa_fingerprint), attempts)
    return SolveResult(None, attempts)


def solve_many(
    seed: PuzzleSeed, aa_fingerprint: bytes, p_p: float, trials: int, rng: Random
) -> List[PuzzleStub]:
    """Hash exactly `trials` independent candidates and keep every solution"""
    limit = threshold_limit(p_p)
    found = []
    for _ in range(trials):
        r = rng.getrandbits(NONCE_LEN * 8).to_bytes(NONCE_LEN, "big")
        s = rng.getrandbits(SOLUTION_LEN * 8).to_bytes(SOLUTION_LEN, "big")
        if puzzle_hash(seed.h_k, r, s, aa_fingerprint) < limit:
            found.append(PuzzleStub(seed.h_k, r, s, aa_fingerprint))
    return found


# Verification


@dataclass(frozen=True)
class StubVerdict:
    """Result of verify_stub"""

    accepted: bool
    rule: Optional[str] = None

    @property
    def reason(self) -> Optional[str]:
        return RULE_REASONS.get(self.rule) if self.rule else None


class SpentStubSet:
    """Stubs already redeemed, erased when a new period begins"""

    def __init__(
        self,
        on_insert: Optional[Callable[[str, int], bool]] = None,
        on_rotate: Optional[Callable[[int], object]] = None,
    ) -> None:
        """
        Args:
            on_insert: Optional durable check-and-insert (returns False when
                the digest was already stored)
            on_rotate: Called with the new period when the period changes, so
                a durable copy can drop earlier periods
        """
        self._digests: Set[str] = set()
        self._period: Optional[int] = None
        self._lock = threading.Lock()
        self._on_insert = on_insert
        self._on_rotate = on_rotate

    def check_and_insert(self, digest: str, period: int) -> bool:
        """
        Returns:
            True if the digest was not seen before in this period
        """
        with self._lock:
            if self._period != period:
                self._digests.clear()
                self._period = period
                if self._on_rotate is not None:
                    self._on_rotate(period)
            if digest in self._digests:
                return False
            if self._on_insert is not None and not self._on_insert(digest, period):
                self._digests.add(digest)
                return False
            self._digests.add(digest)
            return True

    def __contains__(self, digest: str) -> bool:
        return digest in self._digests

    def __len__(self) -> int:
        return len(self._digests)


def verify_stub(
    stub: PuzzleStub,
    now: float,
    schedule: PuzzleSchedule,
    current_seed: PuzzleSeed,
    my_fingerprint: bytes,
    spent_set: SpentStubSet,
    p_p: float,
) -> StubVerdict:
    """
    Check a stub against the five acceptance rules, in order

    (i) now is inside the acceptance window; (ii) the stub uses the current
    seed; (iii) the stub names this AA; (iv) the hash meets the threshold;
    (v) the stub was not spent before. An accepted stub is inserted into the
    spent set.

    Returns:
        StubVerdict with the first failing rule
    """
    if not schedule.in_acceptance(now):
        return StubVerdict(False, RULE_WINDOW)
    if stub.h_k != current_seed.h_k or schedule.period_index(now) != current_seed.period_index:
        return StubVerdict(False, RULE_SEED)
    if stub.aa_fingerprint != my_fingerprint:
        return StubVerdict(False, RULE_FINGERPRINT)
    if not meets_threshold(stub.hash_value(), p_p):
        return StubVerdict(False, RULE_THRESHOLD)
    if not spent_set.check_and_insert(stub.digest(), current_seed.period_index):
        return StubVerdict(False, RULE_SPENT)
    return StubVerdict(True)


# Calibration


@dataclass(frozen=True)
class YieldModel:
    """Binomial model of puzzles solved per period"""

    p: float
    trials: int

    @property
    def mean(self) -> float:
        return self.p * self.trials

    @property
    def std(self) -> float:
        return math.sqrt(self.trials * self.p * (1 - self.p))


def _attempt_budget(window_s: float, t_p: float) -> int:
    # tolerance so 5499.9999999 counts as 5500
    return max(0, math.floor(window_s / t_p + 1e-9))


def calibrate_pp(t_p0: float, p_c_99: float, schedule: PuzzleSchedule) -> float:
    """
    Smallest p_p letting the slowest device solve with probability above 0.99

    Args:
        t_p0: Seconds per hash on the slowest supported device
        p_c_99: Worst-case network latency allowance
        schedule: Puzzle schedule

    Returns:
        p_p = 1 - 0.01^(1/N0) with N0 the slow device's attempt budget

    Raises:
        PuzzleError: The slow device cannot hash even once
    """
    if t_p0 <= 0:
        raise PuzzleError("t_p0 must be positive")
    if schedule.acceptance_period_s <= p_c_99:
        raise PuzzleError("Latency allowance exceeds the acceptance period")
    n0 = _attempt_budget(schedule.acceptance_period_s - p_c_99, t_p0)
    if n0 == 0:
        raise PuzzleError("Schedule infeasible: slow device gets zero attempts")
    return -math.expm1(math.log(0.01) / n0)


def yield_distribution(
    p_p: float, schedule: PuzzleSchedule, p_c: float, t_p: float
) -> YieldModel:
    """
    Binomial yield of one period: B(p_p, floor((P_a - P_c) / t_p))
    """
    if t_p <= 0:
        raise PuzzleError("t_p must be positive")
    return YieldModel(p_p, _attempt_budget(schedule.acceptance_period_s - p_c, t_p))


# Solver daemon


class SimulatedClock:
    """Manually advanced clock"""

    def __init__(self, start: float = 0.0) -> None:
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


@dataclass
class DaemonReport:
    periods: int
    stubs: int
    attempts: int
    busy_s: float
    wall_s: float

    @property
    def cpu_fraction(self) -> float:
        return self.busy_s / self.wall_s if self.wall_s else 0.0


class SolverDaemon:
    """
    Client-side solver that hashes only inside each acceptance window

    Each hash advances the clock by t_p, so busy time is measured on the same
    clock the deadlines use.
    """

    def __init__(
        self,
        seed_source: Callable[[int], PuzzleSeed],
        schedule: PuzzleSchedule,
        aa_fingerprint: bytes,
        p_p: float,
        t_p: float,
        clock: Optional[SimulatedClock] = None,
        rng: Optional[Random] = None,
    ) -> None:
        self.seed_source = seed_source
        self.schedule = schedule
        self.aa_fingerprint = aa_fingerprint
        self.p_p = p_p
        self.t_p = t_p
        self.clock = clock or SimulatedClock()
        self.rng = rng or Random(0)
        self.stubs: List[PuzzleStub] = []
        self._attempts = 0

    def run_period(self, index: int) -> float:
        """Solve as many puzzles as fit in period index; returns busy seconds"""
        start = self.schedule.period_start(index)
        if self.clock.now < start:
            self.clock.now = start
        seed = self.seed_source(index)
        deadline = self.schedule.solving_deadline(index)
        busy_start = self.clock.now

        def tick() -> None:
            self.clock.advance(self.t_p)

        while self.clock.now + self.t_p <= deadline:
            result = solve(
                seed,
                self.aa_fingerprint,
                self.p_p,
                deadline - self.t_p,
                clock=self.clock,
                rng=self.rng,
                on_attempt=tick,
            )
            self._attempts += result.attempts
            if result.stub is not None:
                self.stubs.append(result.stub)
            elif result.attempts == 0:
                break
        busy = self.clock.now - busy_start
        self.clock.now = self.schedule.period_start(index + 1)
        return busy

    def run(self, periods: int, first_period: int = 0) -> DaemonReport:
        self._attempts = 0
        self.stubs = []
        busy = 0.0
        for index in range(first_period, first_period + periods):
            busy += self.run_period(index)
        return DaemonReport(
            periods=periods,
            stubs=len(self.stubs),
            attempts=self._attempts,
            busy_s=busy,
            wall_s=periods * self.schedule.release_period_s,
        )
