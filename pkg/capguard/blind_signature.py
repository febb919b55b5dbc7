"""
RSA Blind Signatures

Full-domain-hash RSA blind signatures for capability issuance, plus the AA
key material (two signing key pairs per AA), key rotation and the directory
gatekeepers use to verify tokens.

Issuance round trip::

    blinded, ctx = blind(payload, aa_public.site, TokenKind.SITE)
    blind_sig = blind_sign(blinded, aa_keys.site_signing_key, TokenKind.SITE)
    capability = unblind(blind_sig, ctx, aa_public.site)
"""

import hashlib
import secrets
import time
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path
from typing import Dict, Optional, Set, Tuple

import yaml
from Crypto.PublicKey import RSA

from .exceptions import SigningKeyError, TokenEncodingError, UnknownAuthorityError
from .tokens import (
    FINGERPRINT_LEN,
    BlindingContext,
    Capability,
    TokenKind,
    TokenPayload,
    b64url_decode,
    b64url_encode,
    bytes_to_int,
    int_to_bytes,
)

MIN_MODULUS_BITS = 1024
DEFAULT_MODULUS_BITS = 2048
PUBLIC_EXPONENT = 65537

# trans tokens are signed with the site key and debit the site bucket
KEY_USAGE = {TokenKind.SITE: "site", TokenKind.TRANS: "site", TokenKind.RELAY: "relay"}


@dataclass(frozen=True)
class RSAPublicKey:
    """Public half of one signing key"""

    n: int
    e: int

    @property
    def bits(self) -> int:
        return self.n.bit_length()

    @property
    def modulus_bytes(self) -> int:
        return (self.bits + 7) // 8

    def to_dict(self) -> Dict[str, str]:
        return {"n": b64url_encode(int_to_bytes(self.n)), "e": str(self.e)}

    @classmethod
    def from_dict(cls, data: Dict[str, str]) -> "RSAPublicKey":
        return cls(n=bytes_to_int(b64url_decode(data["n"])), e=int(data["e"]))


@dataclass(frozen=True)
class SigningKey:
    """Private RSA key bound to one usage (site or relay)"""

    usage: str
    public: RSAPublicKey
    d: int = field(repr=False)
    p: int = field(repr=False)
    q: int = field(repr=False)

    @classmethod
    def generate(cls, usage: str, bits: int = DEFAULT_MODULUS_BITS) -> "SigningKey":
        """
        Generate a fresh key pair

        Args:
            usage: site or relay
            bits: Modulus length

        Returns:
            SigningKey
        """
        if bits < MIN_MODULUS_BITS:
            raise SigningKeyError(
                f"Modulus of {bits} bits is below the {MIN_MODULUS_BITS}-bit floor",
                modulus_bits=bits,
            )
        key = RSA.generate(bits, e=PUBLIC_EXPONENT)
        return cls.from_rsa(usage, key)

    @classmethod
    def from_rsa(cls, usage: str, key: RSA.RsaKey) -> "SigningKey":
        return cls(
            usage=usage,
            public=RSAPublicKey(int(key.n), int(key.e)),
            d=int(key.d),
            p=int(key.p),
            q=int(key.q),
        )

    def sign_raw(self, message: int) -> int:
        """message^d mod N, computed with the CRT"""
        dp = self.d % (self.p - 1)
        dq = self.d % (self.q - 1)
        m1 = pow(message % self.p, dp, self.p)
        m2 = pow(message % self.q, dq, self.q)
        h = (pow(self.q, -1, self.p) * (m1 - m2)) % self.p
        return (m2 + h * self.q) % self.public.n

    def to_pem(self) -> bytes:
        key = RSA.construct((self.public.n, self.public.e, self.d, self.p, self.q))
        return bytes(key.export_key("PEM"))

    @classmethod
    def from_pem(cls, usage: str, pem: bytes) -> "SigningKey":
        return cls.from_rsa(usage, RSA.import_key(pem))


def full_domain_hash(message: bytes, modulus: int) -> int:
    """
    Expand SHA-512 over a counter to the modulus width (MGF1 style)

    The result is masked one bit below the modulus length so it is always
    smaller than the modulus.
    """
    width = (modulus.bit_length() + 7) // 8
    stream = b""
    counter = 0
    while len(stream) < width:
        stream += hashlib.sha512(message + counter.to_bytes(4, "big")).digest()
        counter += 1
    value = int.from_bytes(stream[:width], "big")
    value &= (1 << (modulus.bit_length() - 1)) - 1
    return value or 1


def message_representative(
    payload: TokenPayload, kind: TokenKind, public: RSAPublicKey
) -> int:
    """FDH value signed for a payload; the kind byte is bound into the hash"""
    return full_domain_hash(bytes([kind.code]) + payload.encode(), public.n)


def _check_modulus(public: RSAPublicKey) -> None:
    if public.bits < MIN_MODULUS_BITS:
        raise SigningKeyError(
            f"Degenerate key: {public.bits}-bit modulus", modulus_bits=public.bits
        )


def blind(
    payload: TokenPayload, public: RSAPublicKey, kind: TokenKind
) -> Tuple[int, BlindingContext]:
    """
    Blind a payload for signing

    Args:
        payload: Token payload (sizes are enforced by TokenPayload itself)
        public: AA public key for the requested kind
        kind: Token kind

    Returns:
        (blinded message, blinding context)

    Raises:
        SigningKeyError: Modulus below 1024 bits
    """
    _check_modulus(public)
    n = public.n
    message = message_representative(payload, kind, public)
    while True:
        factor = secrets.randbelow(n - 2) + 2
        if gcd(factor, n) == 1:
            break
    blinded = (message * pow(factor, public.e, n)) % n
    return blinded, BlindingContext(factor, blinded, payload, kind)


def blind_sign(blinded_message: int, signing_key: SigningKey, kind: TokenKind) -> int:
    """
    Sign a blinded message with the key selected by kind

    Raises:
        SigningKeyError: Key usage does not match the kind
        TokenEncodingError: Message outside [1, N-1]
    """
    if KEY_USAGE[kind] != signing_key.usage:
        raise SigningKeyError(
            f"A {signing_key.usage} key cannot sign {kind.value} tokens", kind=kind.value
        )
    if not 1 <= blinded_message < signing_key.public.n:
        raise TokenEncodingError("Blinded message outside [1, N-1]", "blinded_message")
    return signing_key.sign_raw(blinded_message)


def unblind(
    blind_signature: int, context: BlindingContext, public: RSAPublicKey
) -> Capability:
    """
    Remove the blinding factor and build the spendable capability

    Raises:
        SigningKeyError: Blinding factor not invertible under this modulus
    """
    n = public.n
    try:
        inverse = pow(context.blinding_factor, -1, n)
    except ValueError as e:
        raise SigningKeyError("Blinding factor is not invertible") from e
    signature = (blind_signature * inverse) % n
    return Capability(context.payload, signature, context.kind, public.modulus_bytes)


def verify_raw(cap: Capability, public: RSAPublicKey) -> bool:
    """Check a capability signature against one public key"""
    if cap.signature <= 0 or cap.signature >= public.n:
        return False
    expected = message_representative(cap.payload, cap.kind, public)
    return pow(cap.signature, public.e, public.n) == expected


@dataclass(frozen=True)
class AAPublicKeys:
    """What an AA publishes: fingerprint, both public keys, validity window"""

    fingerprint: bytes
    site: RSAPublicKey
    relay: RSAPublicKey
    valid_from: int
    valid_until: int

    def key_for(self, kind: TokenKind) -> RSAPublicKey:
        return self.site if KEY_USAGE[kind] == "site" else self.relay

    def is_active(self, now: float) -> bool:
        return self.valid_from <= now < self.valid_until

    def to_dict(self) -> Dict[str, object]:
        return {
            "fingerprint": self.fingerprint.hex(),
            "site": self.site.to_dict(),
            "relay": self.relay.to_dict(),
            "valid_from": self.valid_from,
            "valid_until": self.valid_until,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "AAPublicKeys":
        return cls(
            fingerprint=bytes.fromhex(str(data["fingerprint"])),
            site=RSAPublicKey.from_dict(data["site"]),  # type: ignore[arg-type]
            relay=RSAPublicKey.from_dict(data["relay"]),  # type: ignore[arg-type]
            valid_from=int(data["valid_from"]),  # type: ignore[call-overload]
            valid_until=int(data["valid_until"]),  # type: ignore[call-overload]
        )


@dataclass(frozen=True)
class AAKeyPair:
    """The two signing key pairs an AA holds for one validity window"""

    fingerprint: bytes
    site_signing_key: SigningKey
    relay_signing_key: SigningKey
    valid_from: int
    valid_until: int

    @classmethod
    def generate(
        cls,
        bits: int = DEFAULT_MODULUS_BITS,
        now: Optional[float] = None,
        lifetime_s: int = 30 * 86400,
        fingerprint: Optional[bytes] = None,
    ) -> "AAKeyPair":
        """
        Generate both signing keys

        Args:
            bits: Modulus length
            now: Start of the validity window (defaults to the wall clock)
            lifetime_s: Length of the validity window
            fingerprint: Keep an existing fingerprint (rotation); derived from
                the site key when omitted

        Returns:
            AAKeyPair
        """
        start = int(now if now is not None else time.time())
        site = SigningKey.generate("site", bits)
        relay = SigningKey.generate("relay", bits)
        if fingerprint is None:
            fingerprint = hashlib.sha1(int_to_bytes(site.public.n)).digest()
        if len(fingerprint) != FINGERPRINT_LEN:
            raise SigningKeyError("AA fingerprint must be 20 bytes")
        return cls(fingerprint, site, relay, start, start + lifetime_s)

    def key_for(self, kind: TokenKind) -> SigningKey:
        return self.site_signing_key if KEY_USAGE[kind] == "site" else self.relay_signing_key

    def public_keys(self) -> AAPublicKeys:
        return AAPublicKeys(
            self.fingerprint,
            self.site_signing_key.public,
            self.relay_signing_key.public,
            self.valid_from,
            self.valid_until,
        )


class AAKeyring:
    """Holds the active key pair of one AA and persists it as PEM files"""

    def __init__(self, keys: AAKeyPair, key_dir: Optional[Path] = None) -> None:
        self.current = keys
        self.key_dir = key_dir

    @classmethod
    def load_or_create(
        cls,
        key_dir: Path,
        bits: int = DEFAULT_MODULUS_BITS,
        fingerprint: Optional[bytes] = None,
        now: Optional[float] = None,
    ) -> "AAKeyring":
        """
        Load keys from key_dir, generating and saving them on first start

        Args:
            key_dir: Directory holding site.pem, relay.pem and meta.yml
            bits: Modulus length for new keys
            fingerprint: Configured fingerprint, if any
            now: Clock value for a new validity window

        Returns:
            AAKeyring
        """
        meta_path = key_dir / "meta.yml"
        if meta_path.exists():
            with open(meta_path, encoding="utf-8") as f:
                meta = yaml.safe_load(f) or {}
            keys = AAKeyPair(
                fingerprint=bytes.fromhex(str(meta["fingerprint"])),
                site_signing_key=SigningKey.from_pem(
                    "site", (key_dir / "site.pem").read_bytes()
                ),
                relay_signing_key=SigningKey.from_pem(
                    "relay", (key_dir / "relay.pem").read_bytes()
                ),
                valid_from=int(meta["valid_from"]),
                valid_until=int(meta["valid_until"]),
            )
            if fingerprint is not None and keys.fingerprint != fingerprint:
                raise SigningKeyError(
                    "Stored keys belong to a different AA fingerprint than configured"
                )
            return cls(keys, key_dir)

        keyring = cls(AAKeyPair.generate(bits, now=now, fingerprint=fingerprint), key_dir)
        keyring.save()
        return keyring

    def rotate(self, now: Optional[float] = None) -> AAKeyPair:
        """Replace both signing keys, keeping the fingerprint"""
        bits = self.current.site_signing_key.public.bits
        lifetime = self.current.valid_until - self.current.valid_from
        self.current = AAKeyPair.generate(
            bits, now=now, lifetime_s=lifetime, fingerprint=self.current.fingerprint
        )
        if self.key_dir is not None:
            self.save()
        return self.current

    def save(self) -> None:
        if self.key_dir is None:
            return
        self.key_dir.mkdir(parents=True, exist_ok=True)
        (self.key_dir / "site.pem").write_bytes(self.current.site_signing_key.to_pem())
        (self.key_dir / "relay.pem").write_bytes(self.current.relay_signing_key.to_pem())
        meta = {
            "fingerprint": self.current.fingerprint.hex(),
            "valid_from": self.current.valid_from,
            "valid_until": self.current.valid_until,
        }
        with open(self.key_dir / "meta.yml", "w", encoding="utf-8") as f:
            yaml.safe_dump(meta, f)


class AADirectory:
    """Maps AA fingerprints to their currently published keys"""

    def __init__(self) -> None:
        self._entries: Dict[bytes, AAPublicKeys] = {}
        self._blacklist: Set[bytes] = set()

    def register(self, keys: AAPublicKeys) -> None:
        """Publish (or replace after rotation) an AA's keys"""
        self._entries[keys.fingerprint] = keys

    def blacklist(self, fingerprint: bytes) -> None:
        self._blacklist.add(fingerprint)

    def is_blacklisted(self, fingerprint: bytes) -> bool:
        return fingerprint in self._blacklist

    def fingerprints(self) -> Set[bytes]:
        return set(self._entries)

    def lookup(self, fingerprint: bytes) -> AAPublicKeys:
        """
        Raises:
            UnknownAuthorityError: Fingerprint never registered
        """
        try:
            return self._entries[fingerprint]
        except KeyError:
            raise UnknownAuthorityError(
                f"Unknown AA fingerprint {fingerprint.hex()}", fingerprint.hex()
            ) from None

    def active_key(
        self, fingerprint: bytes, kind: TokenKind, now: Optional[float] = None
    ) -> Optional[RSAPublicKey]:
        entry = self.lookup(fingerprint)
        if not entry.is_active(now if now is not None else time.time()):
            return None
        return entry.key_for(kind)


def verify_signature(
    cap: Capability, directory: AADirectory, now: Optional[float] = None
) -> bool:
    """
    Check a capability against the directory

    Returns:
        True iff the signature verifies under the active key for the token's
        AA and kind, and the AA is not blacklisted

    Raises:
        UnknownAuthorityError: The token names an AA absent from the directory
    """
    fingerprint = cap.payload.aa_fingerprint
    public = directory.active_key(fingerprint, cap.kind, now)
    if public is None or directory.is_blacklisted(fingerprint):
        return False
    return verify_raw(cap, public)
