"""
Blind Signature Tests

Tests for FDH-RSA blind issuance, AA key material and the AA directory.
"""

import shutil
import tempfile
import unittest
from pathlib import Path

from scipy.stats import chisquare

from capguard.blind_signature import (
    AADirectory,
    AAKeyPair,
    AAKeyring,
    SigningKey,
    blind,
    blind_sign,
    full_domain_hash,
    unblind,
    verify_raw,
    verify_signature,
)
from capguard.exceptions import SigningKeyError, TokenEncodingError, UnknownAuthorityError
from capguard.tokens import Capability, TokenKind, TokenPayload

EPOCH = b"\x11" * 32

# Key generation dominates the runtime; share one pair across the module
KEYS = AAKeyPair.generate(bits=1024, now=1000.0, lifetime_s=1000)


class TestBlindIssuance(unittest.TestCase):
    """Test blind, blind_sign and unblind"""

    def setUp(self) -> None:
        """Test setup"""
        self.public = KEYS.public_keys()
        self.payload = TokenPayload.for_site("example.com", EPOCH, KEYS.fingerprint)

    def issue(self, kind: TokenKind = TokenKind.SITE) -> Capability:
        blinded, ctx = blind(self.payload, self.public.key_for(kind), kind)
        signed = blind_sign(blinded, KEYS.key_for(kind), kind)
        return unblind(signed, ctx, self.public.key_for(kind))

    def test_round_trip_verifies(self) -> None:
        cap = self.issue()
        self.assertTrue(verify_raw(cap, self.public.site))
        self.assertEqual(cap.payload, self.payload)

    def test_relay_kind_uses_relay_key(self) -> None:
        cap = self.issue(TokenKind.RELAY)
        self.assertTrue(verify_raw(cap, self.public.relay))
        self.assertFalse(verify_raw(cap, self.public.site))

    def test_trans_uses_site_key(self) -> None:
        cap = self.issue(TokenKind.TRANS)
        self.assertTrue(verify_raw(cap, self.public.site))

    def test_kind_is_bound_into_signature(self) -> None:
        cap = self.issue(TokenKind.SITE)
        relabeled = Capability(cap.payload, cap.signature, TokenKind.TRANS, cap.modulus_bytes)
        self.assertFalse(verify_raw(relabeled, self.public.site))

    def test_blinded_message_hides_payload(self) -> None:
        blinded_a, ctx_a = blind(self.payload, self.public.site, TokenKind.SITE)
        blinded_b, ctx_b = blind(self.payload, self.public.site, TokenKind.SITE)
        self.assertNotEqual(blinded_a, blinded_b)
        self.assertNotEqual(ctx_a.blinding_factor, ctx_b.blinding_factor)

    def test_blinded_messages_spread_over_modulus(self) -> None:
        modulus = self.public.site.n
        seen = {blind(self.payload, self.public.site, TokenKind.SITE)[0] for _ in range(1000)}
        self.assertEqual(len(seen), 1000)
        bins = [0] * 16
        for blinded in seen:
            bins[blinded * 16 // modulus] += 1
        self.assertGreater(chisquare(bins).pvalue, 0.001)

    def test_different_blinding_gives_same_capability(self) -> None:
        caps = []
        for _ in range(2):
            blinded, ctx = blind(self.payload, self.public.site, TokenKind.SITE)
            signed = blind_sign(blinded, KEYS.site_signing_key, TokenKind.SITE)
            caps.append(unblind(signed, ctx, self.public.site))
        self.assertEqual(caps[0].encode(), caps[1].encode())

    def test_tampered_payload_fails(self) -> None:
        cap = self.issue()
        other = TokenPayload.for_site("evil.example", EPOCH, KEYS.fingerprint)
        forged = Capability(other, cap.signature, cap.kind, cap.modulus_bytes)
        self.assertFalse(verify_raw(forged, self.public.site))

    def test_out_of_range_signature_fails(self) -> None:
        cap = self.issue()
        zero = Capability(cap.payload, 0, cap.kind, cap.modulus_bytes)
        self.assertFalse(verify_raw(zero, self.public.site))

    def test_wrong_key_usage(self) -> None:
        blinded, _ = blind(self.payload, self.public.site, TokenKind.SITE)
        with self.assertRaises(SigningKeyError):
            blind_sign(blinded, KEYS.relay_signing_key, TokenKind.SITE)

    def test_blinded_message_out_of_range(self) -> None:
        with self.assertRaises(TokenEncodingError):
            blind_sign(0, KEYS.site_signing_key, TokenKind.SITE)
        with self.assertRaises(TokenEncodingError):
            blind_sign(self.public.site.n, KEYS.site_signing_key, TokenKind.SITE)

    def test_full_domain_hash_below_modulus(self) -> None:
        n = self.public.site.n
        for i in range(20):
            value = full_domain_hash(bytes([i]) * 7, n)
            self.assertTrue(0 < value < n)


class TestSigningKey(unittest.TestCase):
    def test_small_modulus_rejected(self) -> None:
        with self.assertRaises(SigningKeyError):
            SigningKey.generate("site", bits=512)

    def test_pem_round_trip(self) -> None:
        key = KEYS.site_signing_key
        loaded = SigningKey.from_pem("site", key.to_pem())
        self.assertEqual(loaded.public, key.public)
        self.assertEqual(loaded.sign_raw(12345), key.sign_raw(12345))

    def test_private_fields_hidden_from_repr(self) -> None:
        text = repr(KEYS.site_signing_key)
        self.assertNotIn(str(KEYS.site_signing_key.d), text)

    def test_public_dict_round_trip(self) -> None:
        public = KEYS.public_keys()
        self.assertEqual(type(public).from_dict(public.to_dict()), public)


class TestAAKeyring(unittest.TestCase):
    """Test AAKeyring class"""

    def setUp(self) -> None:
        """Test setup"""
        self.temp_dir = tempfile.mkdtemp()
        self.key_dir = Path(self.temp_dir) / "keys"

    def tearDown(self) -> None:
        """Test cleanup"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_create_then_load(self) -> None:
        created = AAKeyring.load_or_create(self.key_dir, bits=1024, now=0.0)
        self.assertTrue((self.key_dir / "meta.yml").exists())
        loaded = AAKeyring.load_or_create(self.key_dir, bits=1024)
        self.assertEqual(loaded.current.public_keys(), created.current.public_keys())

    def test_fingerprint_mismatch(self) -> None:
        AAKeyring.load_or_create(self.key_dir, bits=1024, fingerprint=b"\x01" * 20)
        with self.assertRaises(SigningKeyError):
            AAKeyring.load_or_create(self.key_dir, bits=1024, fingerprint=b"\x02" * 20)

    def test_rotate_keeps_fingerprint(self) -> None:
        keyring = AAKeyring.load_or_create(self.key_dir, bits=1024, now=0.0)
        old = keyring.current
        new = keyring.rotate(now=500.0)
        self.assertEqual(new.fingerprint, old.fingerprint)
        self.assertNotEqual(new.site_signing_key.public, old.site_signing_key.public)
        self.assertEqual(new.valid_from, 500)
        reloaded = AAKeyring.load_or_create(self.key_dir)
        self.assertEqual(reloaded.current.public_keys(), new.public_keys())

    def test_bad_fingerprint_length(self) -> None:
        with self.assertRaises(SigningKeyError):
            AAKeyPair.generate(bits=1024, fingerprint=b"\x01" * 8)


class TestAADirectory(unittest.TestCase):
    """Test AADirectory and verify_signature"""

    def setUp(self) -> None:
        """Test setup"""
        self.directory = AADirectory()
        self.directory.register(KEYS.public_keys())
        payload = TokenPayload.for_site("example.com", EPOCH, KEYS.fingerprint)
        blinded, ctx = blind(payload, KEYS.public_keys().site, TokenKind.SITE)
        signed = blind_sign(blinded, KEYS.site_signing_key, TokenKind.SITE)
        self.cap = unblind(signed, ctx, KEYS.public_keys().site)

    def test_verifies_inside_window(self) -> None:
        self.assertTrue(verify_signature(self.cap, self.directory, now=1500.0))

    def test_expired_key_rejected(self) -> None:
        self.assertFalse(verify_signature(self.cap, self.directory, now=2000.0))
        self.assertFalse(verify_signature(self.cap, self.directory, now=999.0))

    def test_blacklisted_rejected(self) -> None:
        self.directory.blacklist(KEYS.fingerprint)
        self.assertTrue(self.directory.is_blacklisted(KEYS.fingerprint))
        self.assertFalse(verify_signature(self.cap, self.directory, now=1500.0))

    def test_unknown_authority(self) -> None:
        with self.assertRaises(UnknownAuthorityError):
            verify_signature(self.cap, AADirectory(), now=1500.0)

    def test_rotation_invalidates_old_tokens(self) -> None:
        rotated = AAKeyPair.generate(
            bits=1024, now=1000.0, lifetime_s=1000, fingerprint=KEYS.fingerprint
        )
        self.directory.register(rotated.public_keys())
        self.assertEqual(self.directory.fingerprints(), {KEYS.fingerprint})
        self.assertFalse(verify_signature(self.cap, self.directory, now=1500.0))


if __name__ == "__main__":
    unittest.main()
