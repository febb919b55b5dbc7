"""
Client SDK

Acquires capabilities from an AA (blind, request, unblind), keeps them in
the wallet, spends them at sites, builds three-hop circuits against relay
gatekeepers and runs the onion-service trans-capability exchange.
"""

import asyncio
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, Union

import requests

from .aa_client import AAClient, BeaconClient
from .authority import MockSeedValidator
from .blind_signature import AAPublicKeys, blind, unblind, verify_raw
from .exceptions import CircuitError, RateLimitedError, SeedRejectedError, ServiceError
from .puzzles import PuzzleSchedule, solve
from .rate_limit_handler import RateLimitHandler
from .relay import ExtendDecision, ExtendFrame, send_extend
from .tokens import (
    AUTH_CREDIT,
    AUTH_PSEUDONYM,
    AUTH_SEED,
    TRANS_SCOPE,
    Capability,
    TokenKind,
    TokenPayload,
    domain_scope,
    relay_scope,
)
from .wallet import ClientWallet

logger = logging.getLogger(__name__)

CAPABILITY_HEADER = "X-Capability"
NULLIFIED_HEADER = "X-Capability-Nullified"
HOPS = 3
_STALE_PSEUDONYM = ("expired_pseudonym", "unknown_pseudonym")


# Seed providers


class SeedProvider(Protocol):
    seed_type: str

    def material(self) -> str:
        """Fresh seed material (CAPTCHA token, puzzle stub, assertion)"""
        ...


class MockSeedProvider:
    """Produces tokens the AA's mock CAPTCHA / third-party validator accepts"""

    def __init__(self, secret: str, seed_type: str = "captcha") -> None:
        self.secret = secret
        self.seed_type = seed_type

    def material(self) -> str:
        return MockSeedValidator.make_token(self.secret)


class PuzzleSeedProvider:
    """Solves the current puzzle for one AA"""

    seed_type = "puzzle"

    def __init__(
        self,
        beacon: BeaconClient,
        aa_fingerprint: bytes,
        p_p: float,
        schedule: PuzzleSchedule,
        quorum: Optional[int] = None,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.beacon = beacon
        self.aa_fingerprint = aa_fingerprint
        self.p_p = p_p
        self.schedule = schedule
        self.quorum = quorum
        self.clock = clock

    def material(self) -> str:
        now = self.clock()
        index = self.schedule.period_index(now)
        if not self.schedule.in_acceptance(now):
            raise SeedRejectedError(
                "Outside the puzzle acceptance window", reason="outside_acceptance_window"
            )
        seed = self.beacon.puzzle_seed(index, self.quorum)
        result = solve(
            seed,
            self.aa_fingerprint,
            self.p_p,
            self.schedule.solving_deadline(index),
            self.clock,
        )
        if result.stub is None:
            raise SeedRejectedError(
                f"No puzzle solution within the window ({result.attempts} attempts)",
                reason="threshold_not_met",
            )
        return result.stub.to_text()


# Relay endpoints


class RelayEndpoint(Protocol):
    fingerprint: bytes

    def extend(self, frame: bytes) -> ExtendDecision:
        ...


class TCPRelayEndpoint:
    """A relay gatekeeper reached over the framed TCP protocol"""

    def __init__(self, fingerprint: bytes, host: str, port: int, timeout: float = 10.0) -> None:
        self.fingerprint = fingerprint
        self.host = host
        self.port = port
        self.timeout = timeout

    def extend(self, frame: bytes) -> ExtendDecision:
        reply = asyncio.run(
            send_extend(self.host, self.port, ExtendFrame.decode(frame), self.timeout)
        )
        if reply.get("status") == "created":
            return ExtendDecision(True)
        return ExtendDecision(False, rule=reply.get("rule"), reason=reply.get("reason"))


@dataclass
class Circuit:
    """An established (simulated) three-hop circuit"""

    relays: Tuple[bytes, ...]
    capabilities: List[Capability] = field(default_factory=list)


class CapguardClient:
    """One client's view of one AA"""

    def __init__(
        self,
        aa: AAClient,
        wallet: Optional[ClientWallet] = None,
        seed_provider: Optional[SeedProvider] = None,
        limiter: Optional[RateLimitHandler] = None,
        clock: Callable[[], float] = time.time,
        block_on_limit: bool = False,
    ) -> None:
        """
        Initialize client

        Args:
            aa: AA client
            wallet: Token wallet (empty in-memory wallet by default)
            seed_provider: Source of seed material when no pseudonym is live
            limiter: Client-side pacing (configured from /keys when omitted)
            clock: Time source
            block_on_limit: Sleep through client-side limits instead of raising
        """
        self.aa = aa
        self.wallet = wallet or ClientWallet()
        self.seed_provider = seed_provider
        self.limiter = limiter
        self.clock = clock
        self.block_on_limit = block_on_limit
        self._keys: Optional[AAPublicKeys] = None

    @property
    def keys(self) -> AAPublicKeys:
        """Public keys of the AA, fetched once"""
        if self._keys is None:
            entries, limits = self.aa.get_keys()
            if not entries:
                raise ServiceError("AA published no keys")
            self._keys = entries[0][0]
            if self.limiter is None:
                self.limiter = RateLimitHandler(limits, clock=self.clock)
        return self._keys

    @property
    def fingerprint(self) -> bytes:
        return self.keys.fingerprint

    def _auth(self) -> Tuple[int, bytes, Optional[str]]:
        pseudonym = self.wallet.pseudonym_for(self.fingerprint, self.clock())
        if pseudonym is not None:
            return AUTH_PSEUDONYM, pseudonym.encode(), None
        if self.seed_provider is None:
            raise SeedRejectedError(
                "No live pseudonym and no seed provider", reason="seed_required"
            )
        material = self.seed_provider.material()
        return AUTH_SEED, material.encode("utf-8"), self.seed_provider.seed_type

    def _issue_one(self, payload: TokenPayload, kind: TokenKind, use_credit: bool) -> Capability:
        public = self.keys.key_for(kind)
        blinded, context = blind(payload, public, kind)
        credit_id = self.wallet.credit_for(self.fingerprint) if use_credit else None
        if credit_id is not None:
            pre, pseudonym = self.aa.request_precapability(
                kind, AUTH_CREDIT, credit_id.encode("utf-8"), blinded
            )
            self.wallet.use_credit(self.fingerprint)
        else:
            bucket = "relay" if kind == TokenKind.RELAY else "site"
            assert self.limiter is not None
            self.limiter.wait_if_needed(bucket, block=self.block_on_limit)
            tag, credential, seed_type = self._auth()
            try:
                pre, pseudonym = self.aa.request_precapability(
                    kind, tag, credential, blinded, seed_type
                )
            except SeedRejectedError as e:
                if tag == AUTH_PSEUDONYM and e.reason in _STALE_PSEUDONYM:
                    self.wallet.pseudonyms.pop(self.fingerprint.hex(), None)
                raise
            except RateLimitedError as e:
                self.limiter.blocked_until[bucket] = self.clock() + (e.retry_after or 1.0)
                raise
            if pseudonym is not None:
                self.wallet.add_pseudonym(self.fingerprint, pseudonym)
        cap = unblind(pre.blind_signature, context, public)
        if not verify_raw(cap, public):
            raise ServiceError("AA returned a signature that does not verify")
        return cap

    def acquire(
        self,
        scope: Union[str, bytes],
        kind: TokenKind = TokenKind.SITE,
        count: int = 1,
        use_credit: bool = False,
        store: bool = True,
    ) -> List[Capability]:
        """
        Obtain count capabilities for a scope

        Args:
            scope: Site domain, or padded scope bytes (relay or trans)
            kind: Token kind
            count: Number of capabilities
            use_credit: Spend trans-redemption credit before the relay bucket
            store: Keep the capabilities in the wallet

        Returns:
            The new capabilities (also stored in the wallet)

        Raises:
            RateLimitedError: Bucket empty; capabilities obtained before the
                error are kept
            SeedRejectedError: No pseudonym and no usable seed
        """
        scope_bytes = domain_scope(scope) if isinstance(scope, str) else scope
        epoch = self.aa.get_epoch()
        self.wallet.prune(self.clock(), epoch.value)
        acquired: List[Capability] = []
        try:
            for _ in range(count):
                payload = TokenPayload.create(scope_bytes, epoch.value, self.fingerprint)
                acquired.append(self._issue_one(payload, kind, use_credit))
        finally:
            if store:
                self.wallet.add_capabilities(acquired)
        logger.debug("Acquired %d %s capabilities", len(acquired), kind.value)
        return acquired

    def spend(
        self,
        url: str,
        domain: str,
        connection_id: str = "default",
        session: Optional[requests.Session] = None,
        timeout: float = 10.0,
    ) -> requests.Response:
        """
        GET url presenting a capability for domain

        The capability is forgotten when the site reports it nullified.

        Raises:
            ServiceError: Wallet has no capability for domain, or the request failed
        """
        scope = domain_scope(domain)
        cap = self.wallet.take(scope, TokenKind.SITE, connection_id)
        if cap is None:
            raise ServiceError(f"No capability for {domain} in wallet")
        http = session or self.aa.session
        try:
            response = http.get(
                url, headers={CAPABILITY_HEADER: cap.to_header()}, timeout=timeout
            )
        except requests.exceptions.RequestException as e:
            raise ServiceError(f"GET {url} failed: {e}") from e
        nullified = response.headers.get(NULLIFIED_HEADER) == "true"
        if response.status_code == 401:
            try:
                nullified = bool(response.json().get("nullified"))
            except ValueError:
                pass
        if nullified:
            self.wallet.mark_nullified(cap)
        return response

    def build_circuit(
        self, relays: Sequence[RelayEndpoint], payload: bytes = b"", use_credit: bool = False
    ) -> Circuit:
        """
        Acquire one relay capability per hop and extend through each relay

        Args:
            relays: Guard, middle and exit endpoints
            payload: Opaque onionskin bytes sent with each extension
            use_credit: Pay with trans-redemption credit when available

        Returns:
            Circuit

        Raises:
            CircuitError: Fewer than three distinct relays, or a hop (1-based
                index in .hop) could not be paid for or rejected the request
        """
        fingerprints = tuple(r.fingerprint for r in relays)
        if len(fingerprints) != HOPS or len(set(fingerprints)) != HOPS:
            raise CircuitError("A circuit needs three distinct relays", reason="bad_path")
        circuit = Circuit(fingerprints)
        for hop, relay in enumerate(relays, start=1):
            try:
                (cap,) = self.acquire(
                    relay_scope(relay.fingerprint), TokenKind.RELAY, 1, use_credit, store=False
                )
            except RateLimitedError as e:
                raise CircuitError(
                    f"No relay capability for hop {hop}: {e}", hop=hop, reason="rate_limited"
                ) from e
            decision = relay.extend(ExtendFrame(cap.encode(), payload).encode())
            if not decision.accepted:
                raise CircuitError(
                    f"Hop {hop} rejected the extension: {decision.reason}",
                    hop=hop,
                    reason=decision.reason,
                )
            circuit.capabilities.append(cap)
        logger.info("Circuit established through %d relays", HOPS)
        return circuit


def os_exchange(os_client: CapguardClient, onion_service: CapguardClient) -> Tuple[str, int]:
    """
    Hand a trans-capability from an onion-service client to the onion service

    The client acquires one trans-capability (scope is the fixed system value,
    so it says nothing about the service) and the service redeems it at the
    AA for relay issuance credit.

    Returns:
        (credit id, remaining relay issuances)

    Raises:
        TransRejectedError: The AA refused the redemption
    """
    (trans_cap,) = os_client.acquire(TRANS_SCOPE, TokenKind.TRANS, 1, store=False)
    return redeem_transferred(onion_service, trans_cap)


def redeem_transferred(onion_service: CapguardClient, trans_cap: Capability) -> Tuple[str, int]:
    """Onion-service side of the exchange"""
    credit_id, remaining = onion_service.aa.redeem_trans(trans_cap)
    onion_service.wallet.add_credit(trans_cap.payload.aa_fingerprint, credit_id, remaining)
    logger.info("Redeemed trans-capability for %d relay issuances", remaining)
    return credit_id, remaining
