"""
Token Types and Canonical Encodings

Fixed-width, big-endian encodings for token payloads, capabilities,
pre-capabilities and pseudonyms. Equal tokens are byte-equal, so duplicate
suppression can hash raw bytes.

Capability layout: kind (1) | scope (64) | nonce (16) | epoch (32) |
AA fingerprint (20) | signature (modulus length).
"""

import base64
import hashlib
import secrets
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple

from .exceptions import TokenEncodingError

SCOPE_LEN = 64
NONCE_LEN = 16
EPOCH_LEN = 32
FINGERPRINT_LEN = 20
PAYLOAD_LEN = SCOPE_LEN + NONCE_LEN + EPOCH_LEN + FINGERPRINT_LEN
PSEUDONYM_TAG_LEN = 64
PSEUDONYM_LEN = NONCE_LEN + 8 + 8 + PSEUDONYM_TAG_LEN

TRANS_SCOPE = b"TRANS".ljust(SCOPE_LEN, b"\x00")


class TokenKind(str, Enum):
    """Token kind, carried out-of-band of the payload"""

    SITE = "site"
    RELAY = "relay"
    TRANS = "trans"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "TokenKind":
        for kind, value in _KIND_CODES.items():
            if value == code:
                return kind
        raise TokenEncodingError(f"Unknown token kind byte: {code:#04x}", "kind")


_KIND_CODES = {TokenKind.SITE: 0x01, TokenKind.RELAY: 0x02, TokenKind.TRANS: 0x03}


def b64url_encode(data: bytes) -> str:
    """Encode bytes as unpadded base64url text"""
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    """
    Decode unpadded base64url text

    Raises:
        TokenEncodingError: Text is not valid base64url
    """
    try:
        padded = text + "=" * (-len(text) % 4)
        return base64.urlsafe_b64decode(padded.encode("ascii"))
    except (ValueError, UnicodeEncodeError) as e:
        raise TokenEncodingError(f"Invalid base64url value: {e}") from e


def int_to_bytes(value: int, length: Optional[int] = None) -> bytes:
    """Big-endian encoding of a non-negative integer"""
    size = length if length is not None else max(1, (value.bit_length() + 7) // 8)
    return value.to_bytes(size, "big")


def bytes_to_int(data: bytes) -> int:
    return int.from_bytes(data, "big")


def pad_scope(raw: bytes) -> bytes:
    """
    Zero-pad a scope value to the fixed scope width

    Raises:
        TokenEncodingError: Scope longer than the field
    """
    if len(raw) > SCOPE_LEN:
        raise TokenEncodingError(
            f"Scope is {len(raw)} bytes, the field holds {SCOPE_LEN}", "scope"
        )
    return raw.ljust(SCOPE_LEN, b"\x00")


def domain_scope(domain: str) -> bytes:
    """Scope bytes for a site domain (UTF-8, lower-cased, zero-padded)"""
    return pad_scope(domain.strip().lower().encode("utf-8"))


def relay_scope(fingerprint: bytes) -> bytes:
    """Scope bytes for a relay fingerprint"""
    if len(fingerprint) != FINGERPRINT_LEN:
        raise TokenEncodingError(
            f"Relay fingerprint must be {FINGERPRINT_LEN} bytes", "scope"
        )
    return pad_scope(fingerprint)


@dataclass(frozen=True)
class TokenPayload:
    """The information a client has signed blindly: scope, nonce, epoch, AA"""

    scope: bytes
    nonce: bytes
    epoch_value: bytes
    aa_fingerprint: bytes

    def __post_init__(self) -> None:
        for name, value, size in (
            ("scope", self.scope, SCOPE_LEN),
            ("nonce", self.nonce, NONCE_LEN),
            ("epoch_value", self.epoch_value, EPOCH_LEN),
            ("aa_fingerprint", self.aa_fingerprint, FINGERPRINT_LEN),
        ):
            if len(value) != size:
                raise TokenEncodingError(
                    f"{name} must be {size} bytes, got {len(value)}", name
                )

    @classmethod
    def create(
        cls,
        scope: bytes,
        epoch_value: bytes,
        aa_fingerprint: bytes,
        nonce: Optional[bytes] = None,
    ) -> "TokenPayload":
        """
        Build a payload with a fresh random nonce unless one is supplied

        Args:
            scope: Unpadded or padded scope bytes (at most 64)
            epoch_value: 32-byte epoch beacon value
            aa_fingerprint: 20-byte AA fingerprint
            nonce: Optional 16-byte nonce

        Returns:
            TokenPayload
        """
        return cls(
            scope=pad_scope(scope),
            nonce=nonce if nonce is not None else secrets.token_bytes(NONCE_LEN),
            epoch_value=epoch_value,
            aa_fingerprint=aa_fingerprint,
        )

    @classmethod
    def for_site(
        cls, domain: str, epoch_value: bytes, aa_fingerprint: bytes
    ) -> "TokenPayload":
        return cls.create(domain_scope(domain), epoch_value, aa_fingerprint)

    @classmethod
    def for_relay(
        cls, relay_fingerprint: bytes, epoch_value: bytes, aa_fingerprint: bytes
    ) -> "TokenPayload":
        return cls.create(relay_scope(relay_fingerprint), epoch_value, aa_fingerprint)

    @classmethod
    def for_trans(cls, epoch_value: bytes, aa_fingerprint: bytes) -> "TokenPayload":
        return cls.create(TRANS_SCOPE, epoch_value, aa_fingerprint)

    def encode(self) -> bytes:
        return self.scope + self.nonce + self.epoch_value + self.aa_fingerprint

    @classmethod
    def decode(cls, data: bytes) -> "TokenPayload":
        if len(data) != PAYLOAD_LEN:
            raise TokenEncodingError(
                f"Payload must be {PAYLOAD_LEN} bytes, got {len(data)}", "payload"
            )
        a = SCOPE_LEN
        b = a + NONCE_LEN
        c = b + EPOCH_LEN
        return cls(data[:a], data[a:b], data[b:c], data[c:])

    @property
    def scope_text(self) -> str:
        """Scope with zero padding stripped, decoded leniently"""
        return self.scope.rstrip(b"\x00").decode("utf-8", errors="replace")


@dataclass(frozen=True)
class Capability:
    """Unblinded, spendable token"""

    payload: TokenPayload
    signature: int
    kind: TokenKind
    modulus_bytes: int

    def encode(self) -> bytes:
        if self.signature.bit_length() > self.modulus_bytes * 8:
            raise TokenEncodingError("Signature wider than the modulus", "signature")
        return (
            bytes([self.kind.code])
            + self.payload.encode()
            + int_to_bytes(self.signature, self.modulus_bytes)
        )

    @classmethod
    def decode(cls, data: bytes) -> "Capability":
        """
        Decode canonical capability bytes

        Raises:
            TokenEncodingError: Truncated data or unknown kind byte
        """
        if len(data) <= 1 + PAYLOAD_LEN:
            raise TokenEncodingError(
                f"Capability needs more than {1 + PAYLOAD_LEN} bytes, got {len(data)}",
                "capability",
            )
        kind = TokenKind.from_code(data[0])
        payload = TokenPayload.decode(data[1 : 1 + PAYLOAD_LEN])
        sig_bytes = data[1 + PAYLOAD_LEN :]
        return cls(payload, bytes_to_int(sig_bytes), kind, len(sig_bytes))

    def digest(self) -> bytes:
        """SHA-256 of the canonical bytes, the key for spent sets and filters"""
        return hashlib.sha256(self.encode()).digest()

    def to_header(self) -> str:
        return b64url_encode(self.encode())

    @classmethod
    def from_header(cls, value: str) -> "Capability":
        return cls.decode(b64url_decode(value.strip()))


@dataclass(frozen=True)
class PreCapability:
    """Blind signature returned by an AA before the client unblinds it"""

    blinded_payload: int
    blind_signature: int
    kind: TokenKind
    aa_fingerprint: bytes

    def to_dict(self) -> Dict[str, str]:
        return {
            "kind": self.kind.value,
            "aa_fingerprint": self.aa_fingerprint.hex(),
            "blinded_payload": b64url_encode(int_to_bytes(self.blinded_payload)),
            "blind_signature": b64url_encode(int_to_bytes(self.blind_signature)),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PreCapability":
        try:
            return cls(
                blinded_payload=bytes_to_int(b64url_decode(data["blinded_payload"])),
                blind_signature=bytes_to_int(b64url_decode(data["blind_signature"])),
                kind=TokenKind(data["kind"]),
                aa_fingerprint=bytes.fromhex(data["aa_fingerprint"]),
            )
        except (KeyError, ValueError) as e:
            raise TokenEncodingError(f"Malformed pre-capability: {e}") from e


@dataclass(frozen=True)
class BlindingContext:
    """Client-side secret state between blind() and unblind(); stays on host"""

    blinding_factor: int
    blinded_message: int
    payload: TokenPayload
    kind: TokenKind

    def __repr__(self) -> str:
        return f"BlindingContext(kind={self.kind.value}, payload=<hidden>)"


@dataclass(frozen=True)
class Pseudonym:
    """AA-issued token letting a client skip repeated seed challenges"""

    nonce_r: bytes
    signature_phi: bytes
    issued_at: int
    expires_at: int

    def __post_init__(self) -> None:
        if len(self.nonce_r) != NONCE_LEN:
            raise TokenEncodingError("Pseudonym nonce must be 16 bytes", "nonce_r")
        if len(self.signature_phi) != PSEUDONYM_TAG_LEN:
            raise TokenEncodingError("Pseudonym tag must be 64 bytes", "signature_phi")

    def is_expired(self, now: float) -> bool:
        return now >= self.expires_at

    def signed_fields(self) -> bytes:
        """Bytes covered by the AA tag"""
        return (
            self.nonce_r
            + self.issued_at.to_bytes(8, "big")
            + self.expires_at.to_bytes(8, "big")
        )

    def binding_key(self) -> str:
        """Digest of the nonce, the key of the server-side seed binding"""
        return hashlib.sha256(self.nonce_r).hexdigest()

    def encode(self) -> bytes:
        return self.signed_fields() + self.signature_phi

    @classmethod
    def decode(cls, data: bytes) -> "Pseudonym":
        if len(data) != PSEUDONYM_LEN:
            raise TokenEncodingError(
                f"Pseudonym must be {PSEUDONYM_LEN} bytes, got {len(data)}", "pseudonym"
            )
        return cls(
            nonce_r=data[:NONCE_LEN],
            issued_at=int.from_bytes(data[NONCE_LEN : NONCE_LEN + 8], "big"),
            expires_at=int.from_bytes(data[NONCE_LEN + 8 : NONCE_LEN + 16], "big"),
            signature_phi=data[NONCE_LEN + 16 :],
        )

    def to_text(self) -> str:
        return b64url_encode(self.encode())

    @classmethod
    def from_text(cls, value: str) -> "Pseudonym":
        return cls.decode(b64url_decode(value))


# X-Capability header of issuance requests: "<auth>.<blinded message>", both
# base64url. The auth part is a tag byte followed by the credential.
AUTH_PSEUDONYM = 0x01
AUTH_CREDIT = 0x02
AUTH_SEED = 0x03


def pack_issuance_header(auth_tag: int, credential: bytes, blinded_message: int) -> str:
    """Build the X-Capability value of a /precap request"""
    if auth_tag not in (AUTH_PSEUDONYM, AUTH_CREDIT, AUTH_SEED):
        raise TokenEncodingError(f"Unknown auth tag {auth_tag:#04x}", "auth")
    auth = b64url_encode(bytes([auth_tag]) + credential)
    return f"{auth}.{b64url_encode(int_to_bytes(blinded_message))}"


def unpack_issuance_header(value: str) -> Tuple[int, bytes, int]:
    """
    Split a /precap X-Capability value

    Returns:
        (auth tag, credential bytes, blinded message)

    Raises:
        TokenEncodingError: Missing separator, empty parts or unknown tag
    """
    auth_text, sep, blinded_text = value.strip().partition(".")
    if not sep or not auth_text or not blinded_text:
        raise TokenEncodingError("Expected '<auth>.<blinded>'", "x_capability")
    auth = b64url_decode(auth_text)
    if len(auth) < 2 or auth[0] not in (AUTH_PSEUDONYM, AUTH_CREDIT, AUTH_SEED):
        raise TokenEncodingError("Unknown or empty auth part", "auth")
    return auth[0], auth[1:], bytes_to_int(b64url_decode(blinded_text))
