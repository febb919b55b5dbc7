"""
Access Authority

Validates capability seeds, keeps two token buckets per seed (site and
relay), issues pseudonyms and pre-capabilities, and redeems trans-capabilities
for relay issuance credit.

The AA only ever sees blinded material. Logs carry digests of seed ids and
blinded messages, never payload fields.
"""

import hashlib
import hmac
import logging
import secrets
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Protocol, Union

from .blind_signature import AAKeyring, blind_sign, verify_raw
from .epoch_beacon import EpochBeacon
from .exceptions import (
    RateLimitedError,
    SeedRejectedError,
    TokenEncodingError,
    TransRejectedError,
)
from .puzzles import PuzzleSchedule, PuzzleSeed, PuzzleStub, SpentStubSet, verify_stub
from .state_store import StateStore
from .token_bucket import TokenBucket
from .tokens import (
    NONCE_LEN,
    TRANS_SCOPE,
    Capability,
    PreCapability,
    Pseudonym,
    TokenKind,
)

logger = logging.getLogger(__name__)

SEED_TYPES = ("captcha", "puzzle", "ttp")

TRANS_UNAUTHENTIC = "unauthentic"
TRANS_EXPIRED = "expired"
TRANS_SPENT = "spent"
TRANS_WRONG_SCOPE = "wrong_scope"


def short_digest(data: Union[bytes, str]) -> str:
    """First 16 hex chars of SHA-256, the only form identifiers take in logs"""
    raw = data.encode("utf-8") if isinstance(data, str) else data
    return hashlib.sha256(raw).hexdigest()[:16]


class SeedValidator(Protocol):
    def validate(self, material: str, now: float) -> str:
        """Return the hex seed id or raise SeedRejectedError"""
        ...


class MockSeedValidator:
    """
    Stand-in for a CAPTCHA provider or third-party account check

    A solution token is "<nonce>.<hex HMAC-SHA256(secret, nonce)>".
    """

    def __init__(self, secret: str) -> None:
        self.secret = secret.encode("utf-8")

    @staticmethod
    def make_token(secret: str, nonce: Optional[str] = None) -> str:
        nonce = nonce or secrets.token_hex(NONCE_LEN)
        tag = hmac.new(secret.encode("utf-8"), nonce.encode("utf-8"), hashlib.sha256)
        return f"{nonce}.{tag.hexdigest()}"

    def validate(self, material: str, now: float) -> str:
        nonce, sep, tag = material.partition(".")
        if not sep or not nonce:
            raise SeedRejectedError("Malformed solution token", reason="invalid_solution")
        expected = hmac.new(self.secret, nonce.encode("utf-8"), hashlib.sha256).hexdigest()
        if not hmac.compare_digest(expected, tag):
            raise SeedRejectedError("Solution token does not verify", reason="invalid_solution")
        return hashlib.sha256(material.encode("utf-8")).hexdigest()


class PuzzleSeedValidator:
    """Checks puzzle stubs against the current seed"""

    def __init__(
        self,
        fingerprint: bytes,
        schedule: PuzzleSchedule,
        p_p: float,
        seed_source: Callable[[int], PuzzleSeed],
        spent: Optional[SpentStubSet] = None,
    ) -> None:
        """
        Args:
            fingerprint: This AA's fingerprint
            schedule: Puzzle schedule
            p_p: Per-attempt success probability the stub must meet
            seed_source: Returns the seed of a period index
            spent: Spent stub set (in-memory by default)
        """
        self.fingerprint = fingerprint
        self.schedule = schedule
        self.p_p = p_p
        self.seed_source = seed_source
        self.spent = spent or SpentStubSet()

    def validate(self, material: str, now: float) -> str:
        try:
            stub = PuzzleStub.from_text(material)
        except TokenEncodingError as e:
            raise SeedRejectedError(f"Malformed puzzle stub: {e}", reason="invalid_solution") from e
        seed = self.seed_source(self.schedule.period_index(now))
        verdict = verify_stub(
            stub, now, self.schedule, seed, self.fingerprint, self.spent, self.p_p
        )
        if not verdict.accepted:
            raise SeedRejectedError(
                f"Puzzle stub rejected by rule ({verdict.rule})",
                reason=verdict.reason,
                rule=verdict.rule,
            )
        return stub.digest()


@dataclass
class SeedRecord:
    """A validated seed and its two limiters"""

    seed_id: str
    seed_type: str
    site_bucket: TokenBucket
    relay_bucket: TokenBucket
    created_at: float

    def bucket_for(self, kind: TokenKind) -> TokenBucket:
        # trans issuance draws on the site bucket
        return self.relay_bucket if kind == TokenKind.RELAY else self.site_bucket


@dataclass(frozen=True)
class TransCredit:
    credit_id: str
    remaining: int


@dataclass(frozen=True)
class RateConfig:
    site_r: float = 24
    relay_q: float = 12
    interval_s: float = 600
    burst_window_s: float = 3600

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "RateConfig":
        return cls(
            site_r=float(data.get("site_r", 24)),
            relay_q=float(data.get("relay_q", 12)),
            interval_s=float(data.get("interval_s", 600)),
            burst_window_s=float(data.get("burst_window_s", 3600)),
        )


class AccessAuthority:
    """One AA accepting exactly one seed type"""

    def __init__(
        self,
        keyring: AAKeyring,
        seed_type: str,
        validator: SeedValidator,
        store: StateStore,
        beacon: EpochBeacon,
        rates: Optional[RateConfig] = None,
        pseudonym_validity_s: int = 86400,
        trans_credit: int = 3,
        clock: Optional[Callable[[], float]] = None,
        pseudonym_key: Optional[bytes] = None,
    ) -> None:
        """
        Initialize access authority

        Args:
            keyring: Signing keys
            seed_type: The single seed type accepted
            validator: Seed validator for that type
            store: Durable state
            beacon: Epoch beacon
            rates: Limiter configuration
            pseudonym_validity_s: Pseudonym lifetime
            trans_credit: Relay issuances granted per redeemed trans-capability
            clock: Time source
            pseudonym_key: HMAC key for pseudonym tags; loaded from or saved
                to the store when omitted
        """
        if seed_type not in SEED_TYPES:
            raise SeedRejectedError(f"Unknown seed type {seed_type}", reason="wrong_seed_type")
        self.keyring = keyring
        self.seed_type = seed_type
        self.validator = validator
        self.store = store
        self.beacon = beacon
        self.rates = rates or RateConfig()
        self.pseudonym_validity_s = pseudonym_validity_s
        self.trans_credit = trans_credit
        self.clock = clock or time.time
        self.pseudonym_key = pseudonym_key or self._load_pseudonym_key()

        self._locks: Dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._epoch_index: Optional[int] = None

    @property
    def fingerprint(self) -> bytes:
        return self.keyring.current.fingerprint

    def _load_pseudonym_key(self) -> bytes:
        stored = self.store.get_meta("pseudonym_key")
        if stored:
            return bytes.fromhex(stored)
        key = secrets.token_bytes(32)
        self.store.set_meta("pseudonym_key", key.hex())
        return key

    def _seed_lock(self, seed_id: str) -> threading.Lock:
        with self._locks_guard:
            lock = self._locks.get(seed_id)
            if lock is None:
                lock = self._locks[seed_id] = threading.Lock()
            return lock

    def rotate_epoch_if_needed(self) -> bool:
        """Purge epoch-scoped state once the beacon moves on"""
        now = self.clock()
        epoch = self.beacon.epoch_at(now)
        if self._epoch_index == epoch.index:
            return False
        self._epoch_index = epoch.index
        purged = self.store.purge_epoch(epoch.index, now)
        if purged:
            logger.info("Epoch %d: purged %d stale rows", epoch.index, purged)
        return True

    # Seeds

    def _new_record(self, seed_id: str, now: float) -> SeedRecord:
        r = self.rates
        return SeedRecord(
            seed_id=seed_id,
            seed_type=self.seed_type,
            site_bucket=TokenBucket.for_interval(r.site_r, r.interval_s, r.burst_window_s, now),
            relay_bucket=TokenBucket.for_interval(r.relay_q, r.interval_s, r.burst_window_s, now),
            created_at=now,
        )

    def _load_record(self, seed_id: str) -> Optional[SeedRecord]:
        row = self.store.get_seed(seed_id)
        if row is None:
            return None
        return SeedRecord(
            seed_id=seed_id,
            seed_type=row["seed_type"],
            site_bucket=TokenBucket.from_dict(row["site_bucket"]),
            relay_bucket=TokenBucket.from_dict(row["relay_bucket"]),
            created_at=row["created_at"],
        )

    def _save_record(self, record: SeedRecord) -> None:
        self.store.put_seed(
            record.seed_id,
            record.seed_type,
            record.site_bucket.to_dict(),
            record.relay_bucket.to_dict(),
            record.created_at,
        )

    def validate_seed(self, material: str, seed_type: str) -> SeedRecord:
        """
        Validate seed material and create or fetch its record

        Args:
            material: CAPTCHA token, puzzle stub text or third-party assertion
            seed_type: Declared seed type

        Returns:
            SeedRecord

        Raises:
            SeedRejectedError: Wrong seed type for this AA, invalid solution or
                replayed stub
        """
        self.rotate_epoch_if_needed()
        if seed_type != self.seed_type:
            raise SeedRejectedError(
                f"This AA accepts {self.seed_type} seeds, not {seed_type}",
                reason="wrong_seed_type",
            )
        now = self.clock()
        seed_id = self.validator.validate(material, now)
        with self._seed_lock(seed_id):
            record = self._load_record(seed_id)
            if record is None:
                record = self._new_record(seed_id, now)
                self._save_record(record)
                logger.info("New %s seed %s", self.seed_type, short_digest(seed_id))
        return record

    # Pseudonyms

    def _pseudonym_tag(self, nonce: bytes, issued_at: int, expires_at: int) -> bytes:
        fields = nonce + issued_at.to_bytes(8, "big") + expires_at.to_bytes(8, "big")
        return hmac.new(self.pseudonym_key, fields, hashlib.sha512).digest()

    def issue_pseudonym(self, seed: SeedRecord) -> Pseudonym:
        """
        Issue a pseudonym bound server-side to seed.seed_id

        The pseudonym itself carries no seed information.
        """
        issued_at = int(self.clock())
        expires_at = issued_at + self.pseudonym_validity_s
        nonce = secrets.token_bytes(NONCE_LEN)
        pseudonym = Pseudonym(
            nonce_r=nonce,
            signature_phi=self._pseudonym_tag(nonce, issued_at, expires_at),
            issued_at=issued_at,
            expires_at=expires_at,
        )
        self.store.bind_pseudonym(pseudonym.binding_key(), seed.seed_id, expires_at)
        return pseudonym

    def resolve_pseudonym(self, pseudonym: Pseudonym) -> str:
        """
        Map a pseudonym back to its seed id

        Raises:
            SeedRejectedError: Forged, foreign, expired or unknown pseudonym
        """
        expected = self._pseudonym_tag(
            pseudonym.nonce_r, pseudonym.issued_at, pseudonym.expires_at
        )
        if not hmac.compare_digest(expected, pseudonym.signature_phi):
            raise SeedRejectedError("Pseudonym tag does not verify", reason="invalid_pseudonym")
        now = self.clock()
        if pseudonym.is_expired(now):
            raise SeedRejectedError("Pseudonym expired", reason="expired_pseudonym")
        seed_id = self.store.seed_for_pseudonym(pseudonym.binding_key(), now)
        if seed_id is None:
            raise SeedRejectedError("Unknown pseudonym", reason="unknown_pseudonym")
        return seed_id

    # Pre-capabilities

    def issue_precapability(
        self,
        auth: Union[Pseudonym, SeedRecord],
        blinded_message: int,
        kind: TokenKind,
    ) -> PreCapability:
        """
        Debit the bucket matching kind and blind-sign

        Args:
            auth: Pseudonym or a seed record validated in this request
            blinded_message: Client-blinded message
            kind: Requested token kind

        Returns:
            PreCapability

        Raises:
            SeedRejectedError: Bad pseudonym
            RateLimitedError: Bucket empty (carries retry_after)
            TokenEncodingError: Blinded message outside [1, N-1]
        """
        self.rotate_epoch_if_needed()
        seed_id = auth.seed_id if isinstance(auth, SeedRecord) else self.resolve_pseudonym(auth)
        signing_key = self.keyring.current.key_for(kind)
        if not 1 <= blinded_message < signing_key.public.n:
            # checked before debiting so a malformed request costs nothing
            blind_sign(blinded_message, signing_key, kind)

        with self._seed_lock(seed_id):
            record = self._load_record(seed_id)
            if record is None:
                raise SeedRejectedError("Seed record vanished", reason="unknown_seed")
            now = self.clock()
            bucket = record.bucket_for(kind)
            if not bucket.try_consume(now):
                retry_after = bucket.retry_after(now)
                self._save_record(record)
                raise RateLimitedError(
                    f"{kind.value} bucket empty",
                    retry_after=retry_after,
                    bucket="relay" if kind == TokenKind.RELAY else "site",
                )
            self._save_record(record)

        return self._sign(blinded_message, kind, short_digest(seed_id))

    def _sign(self, blinded_message: int, kind: TokenKind, who: str) -> PreCapability:
        signing_key = self.keyring.current.key_for(kind)
        signature = blind_sign(blinded_message, signing_key, kind)
        logger.info(
            "Issued %s pre-capability for %s (blinded %s)",
            kind.value,
            who,
            short_digest(blinded_message.to_bytes(signing_key.public.modulus_bytes, "big")),
        )
        return PreCapability(blinded_message, signature, kind, self.fingerprint)

    def bucket_levels(self, seed_id: str) -> Dict[str, float]:
        record = self._load_record(seed_id)
        if record is None:
            return {}
        now = self.clock()
        return {"site": record.site_bucket.peek(now), "relay": record.relay_bucket.peek(now)}

    # Trans-capabilities

    def redeem_trans(self, trans_cap: Capability) -> TransCredit:
        """
        Redeem a trans-capability for relay issuance credit

        Raises:
            TransRejectedError: reason is wrong_scope, unauthentic, expired or spent
        """
        self.rotate_epoch_if_needed()
        if trans_cap.kind != TokenKind.TRANS:
            raise TransRejectedError("Not a trans-capability", TRANS_UNAUTHENTIC)
        if trans_cap.payload.scope != TRANS_SCOPE:
            raise TransRejectedError("Trans-capability scope mismatch", TRANS_WRONG_SCOPE)
        if trans_cap.payload.aa_fingerprint != self.fingerprint or not verify_raw(
            trans_cap, self.keyring.current.site_signing_key.public
        ):
            raise TransRejectedError("Trans-capability signature invalid", TRANS_UNAUTHENTIC)
        epoch = self.beacon.epoch_at(self.clock())
        if trans_cap.payload.epoch_value != epoch.value:
            raise TransRejectedError("Trans-capability from another epoch", TRANS_EXPIRED)
        digest = trans_cap.digest().hex()
        if not self.store.mark_trans_spent(digest, epoch.index):
            raise TransRejectedError("Trans-capability already redeemed", TRANS_SPENT)

        credit = TransCredit(secrets.token_urlsafe(16), self.trans_credit)
        self.store.put_credit(credit.credit_id, credit.remaining, epoch.index)
        logger.info("Redeemed trans-capability %s", short_digest(digest))
        return credit

    def issue_with_credit(self, credit_id: str, blinded_message: int) -> PreCapability:
        """
        Issue one relay pre-capability against a redemption credit

        Raises:
            TransRejectedError: Credit unknown, from another epoch or used up
        """
        self.rotate_epoch_if_needed()
        epoch = self.beacon.epoch_at(self.clock())
        signing_key = self.keyring.current.relay_signing_key
        if not 1 <= blinded_message < signing_key.public.n:
            blind_sign(blinded_message, signing_key, TokenKind.RELAY)
        if self.store.take_credit(credit_id, epoch.index) is None:
            raise TransRejectedError("No redemption credit left", TRANS_SPENT)
        return self._sign(blinded_message, TokenKind.RELAY, "credit " + short_digest(credit_id))
