"""
Gatekeeper Tests

Tests for capability validation, spending and duplicate suppression.
"""

import math
import unittest
from random import Random

from capguard.blind_signature import AADirectory, AAKeyPair, blind, blind_sign, unblind
from capguard.epoch_beacon import EpochBeacon
from capguard.gatekeeper import (
    REASON_BAD_SIGNATURE,
    REASON_BLACKLISTED,
    REASON_DECLINED,
    REASON_EPOCH,
    REASON_MALFORMED,
    REASON_MISSING,
    REASON_NULLIFIED,
    REASON_SCOPE,
    REASON_UNKNOWN_AA,
    REASON_WRONG_KIND,
    RULE_EPOCH,
    RULE_NULLIFIED,
    RULE_SCOPE,
    RULE_SIGNATURE,
    DuplicateSuppressor,
    Gatekeeper,
    ValidationRules,
    spend,
    validate,
)
from capguard.tokens import Capability, TokenKind, TokenPayload

KEYS = AAKeyPair.generate(bits=1024, now=0.0, lifetime_s=10**9)
RELAY_FP = b"\x42" * 20


def issue(payload: TokenPayload, kind: TokenKind, keys: AAKeyPair = KEYS) -> Capability:
    public = keys.public_keys().key_for(kind)
    blinded, ctx = blind(payload, public, kind)
    return unblind(blind_sign(blinded, keys.key_for(kind), kind), ctx, public)


def fake_capability(rng: Random) -> Capability:
    """Unsigned capability with a random nonce, for spending statistics"""
    nonce = rng.getrandbits(128).to_bytes(16, "big")
    payload = TokenPayload.create(b"example.com", b"\x00" * 32, b"\x01" * 20, nonce=nonce)
    return Capability(payload, 1, TokenKind.SITE, 128)


class GatekeeperTestCase(unittest.TestCase):
    def setUp(self) -> None:
        """Test setup"""
        self.now = 1000.0
        self.beacon = EpochBeacon("epoch", 86400, clock=lambda: self.now)
        self.directory = AADirectory()
        self.directory.register(KEYS.public_keys())
        self.epoch = self.beacon.current().value

    def site_cap(self, domain: str = "example.com") -> Capability:
        return issue(TokenPayload.for_site(domain, self.epoch, KEYS.fingerprint), TokenKind.SITE)


class TestValidate(GatekeeperTestCase):
    """Test rules (i) to (iv)"""

    def setUp(self) -> None:
        super().setUp()
        self.rules = ValidationRules.for_site("example.com", self.directory, self.beacon)

    def test_valid(self) -> None:
        self.assertTrue(validate(self.site_cap(), self.rules).accepted)

    def test_bad_signature(self) -> None:
        cap = self.site_cap()
        forged = Capability(cap.payload, cap.signature + 1, cap.kind, cap.modulus_bytes)
        verdict = validate(forged, self.rules)
        self.assertEqual((verdict.rule, verdict.reason), (RULE_SIGNATURE, REASON_BAD_SIGNATURE))

    def test_unknown_aa(self) -> None:
        payload = TokenPayload.for_site("example.com", self.epoch, b"\x99" * 20)
        cap = Capability(payload, 12345, TokenKind.SITE, 128)
        self.assertEqual(validate(cap, self.rules).reason, REASON_UNKNOWN_AA)

    def test_blacklisted(self) -> None:
        cap = self.site_cap()
        self.directory.blacklist(KEYS.fingerprint)
        self.assertEqual(validate(cap, self.rules).reason, REASON_BLACKLISTED)

    def test_wrong_kind(self) -> None:
        payload = TokenPayload.for_relay(RELAY_FP, self.epoch, KEYS.fingerprint)
        cap = issue(payload, TokenKind.RELAY)
        self.assertEqual(validate(cap, self.rules).reason, REASON_WRONG_KIND)

    def test_scope(self) -> None:
        verdict = validate(self.site_cap("other.org"), self.rules)
        self.assertEqual((verdict.rule, verdict.reason), (RULE_SCOPE, REASON_SCOPE))

    def test_stale_epoch(self) -> None:
        cap = self.site_cap()
        self.now += 86400
        verdict = validate(cap, self.rules)
        self.assertEqual((verdict.rule, verdict.reason), (RULE_EPOCH, REASON_EPOCH))

    def test_nullified(self) -> None:
        cap = self.site_cap()
        self.rules.suppressor.spent.add(cap.digest())
        verdict = validate(cap, self.rules)
        self.assertEqual(verdict.rule, RULE_NULLIFIED)
        self.assertTrue(verdict.nullified)

    def test_cdn_mode(self) -> None:
        rules = ValidationRules.for_site(
            "cdn.example", self.directory, self.beacon, customer_domains=["a.com", "b.com"]
        )
        self.assertTrue(validate(self.site_cap("b.com"), rules).accepted)
        self.assertFalse(validate(self.site_cap("c.com"), rules).accepted)

    def test_relay_rules(self) -> None:
        rules = ValidationRules.for_relay(RELAY_FP, self.directory, self.beacon)
        payload = TokenPayload.for_relay(RELAY_FP, self.epoch, KEYS.fingerprint)
        self.assertTrue(validate(issue(payload, TokenKind.RELAY), rules).accepted)
        other = TokenPayload.for_relay(b"\x43" * 20, self.epoch, KEYS.fingerprint)
        self.assertEqual(validate(issue(other, TokenKind.RELAY), rules).reason, REASON_SCOPE)


class TestSpend(unittest.TestCase):
    """Monte Carlo checks of the per-capability allowance"""

    TRIALS = 20_000

    def mean_uses(self, w_i: float, seed: int) -> float:
        rng = Random(seed)
        suppressor = DuplicateSuppressor(expected_items=2 * self.TRIALS)
        total = 0
        for _ in range(self.TRIALS):
            cap = fake_capability(rng)
            while True:
                result = spend(cap, w_i, rng, suppressor)
                if result.allowed:
                    total += 1
                if result.nullified:
                    break
        return total / self.TRIALS

    def test_mean_uses_match_weight(self) -> None:
        for w_i in (0.25, 1.0, 5.0):
            # uses ~ Bernoulli(w) below 1, Geometric(1/w) above
            variance = w_i * (1 - w_i) if w_i < 1 else w_i * (w_i - 1)
            sigma = math.sqrt(variance / self.TRIALS)
            mean = self.mean_uses(w_i, seed=int(w_i * 100))
            # a Bloom false positive can nullify a fresh capability early
            self.assertLessEqual(abs(mean - w_i), 3 * sigma + 2e-4, f"w_i={w_i}")

    def test_single_use(self) -> None:
        suppressor = DuplicateSuppressor()
        cap = fake_capability(Random(1))
        self.assertEqual(spend(cap, 1.0, Random(0), suppressor).allowed, True)
        second = spend(cap, 1.0, Random(0), suppressor)
        self.assertFalse(second.allowed)
        self.assertTrue(second.nullified)

    def test_declined_stays_declined(self) -> None:
        suppressor = DuplicateSuppressor()
        rng = Random(5)
        declined = 0
        for _ in range(200):
            cap = fake_capability(rng)
            if not spend(cap, 0.25, rng, suppressor).allowed:
                declined += 1
                for _ in range(5):
                    self.assertFalse(spend(cap, 0.25, rng, suppressor).allowed)
        self.assertGreater(declined, 0)

    def test_duplicates_not_readmitted(self) -> None:
        rng = Random(9)
        suppressor = DuplicateSuppressor(expected_items=self.TRIALS)
        caps = [fake_capability(rng) for _ in range(self.TRIALS)]
        for cap in caps:
            spend(cap, 1.0, rng, suppressor)
        readmitted = sum(spend(cap, 1.0, rng, suppressor).allowed for cap in caps)
        self.assertEqual(readmitted, 0)
        fresh = [fake_capability(rng) for _ in range(self.TRIALS)]
        false_nullified = sum(suppressor.is_nullified(cap.digest()) for cap in fresh)
        bound = 2e-4 + 3 * math.sqrt(1e-4 / self.TRIALS)
        self.assertLessEqual(false_nullified / self.TRIALS, bound)

    def test_invalid_weight(self) -> None:
        with self.assertRaises(ValueError):
            spend(fake_capability(Random(0)), 0, Random(0), DuplicateSuppressor())


class TestDuplicateSuppressor(unittest.TestCase):
    def test_rotation_clears(self) -> None:
        suppressor = DuplicateSuppressor(expected_items=100)
        self.assertTrue(suppressor.rotate(1))
        suppressor.spent.add(b"x")
        suppressor.declined.add(b"y")
        self.assertFalse(suppressor.rotate(1))
        self.assertTrue(suppressor.is_nullified(b"x"))
        self.assertTrue(suppressor.rotate(2))
        self.assertFalse(suppressor.is_nullified(b"x"))
        self.assertFalse(suppressor.is_nullified(b"y"))

    def test_sized_from_baseline(self) -> None:
        # 100 requests per 600 s over a one-day epoch
        suppressor = DuplicateSuppressor.for_baseline(100, 600, 86400)
        self.assertEqual(suppressor.expected_items, 14_400)
        self.assertEqual(suppressor.false_positive_rate, 1e-4)
        with self.assertRaises(ValueError):
            DuplicateSuppressor.for_baseline(0, 600, 86400)

    def test_false_positive_rate_at_design_load(self) -> None:
        suppressor = DuplicateSuppressor.for_baseline(100, 600, 86400)
        rng = Random(5)
        for _ in range(suppressor.expected_items):
            suppressor.spent.add(rng.getrandbits(256).to_bytes(32, "big"))
        queries = 200_000
        false_hits = sum(
            suppressor.is_nullified(rng.getrandbits(256).to_bytes(32, "big"))
            for _ in range(queries)
        )
        self.assertLessEqual(false_hits / queries, 2 * suppressor.false_positive_rate)


class TestGatekeeper(GatekeeperTestCase):
    """Test the validate-then-spend front end"""

    def setUp(self) -> None:
        super().setUp()
        rules = ValidationRules.for_site("example.com", self.directory, self.beacon)
        self.gatekeeper = Gatekeeper(
            rules,
            weights={"captcha": 1.0, "puzzle": 0.25},
            aa_seed_types={KEYS.fingerprint: "captcha"},
            rng=Random(0),
        )

    def test_check_spends_once(self) -> None:
        cap = self.site_cap()
        self.assertTrue(self.gatekeeper.check(cap).accepted)
        verdict = self.gatekeeper.check(cap)
        self.assertFalse(verdict.accepted)
        self.assertEqual(verdict.reason, REASON_NULLIFIED)

    def test_weight_lookup(self) -> None:
        cap = self.site_cap()
        self.assertEqual(self.gatekeeper.seed_type_of(cap), "captcha")
        self.assertEqual(self.gatekeeper.weight_for(cap), 1.0)
        self.gatekeeper.aa_seed_types[KEYS.fingerprint] = "ttp"
        self.assertEqual(self.gatekeeper.weight_for(cap), self.gatekeeper.default_weight)

    def test_fractional_weight_declines(self) -> None:
        self.gatekeeper.aa_seed_types[KEYS.fingerprint] = "puzzle"
        reasons = {self.gatekeeper.check(self.site_cap()).reason for _ in range(30)}
        self.assertIn(REASON_DECLINED, reasons)
        self.assertIn(None, reasons)

    def test_header(self) -> None:
        self.assertEqual(self.gatekeeper.check_header(None).reason, REASON_MISSING)
        self.assertEqual(self.gatekeeper.check_header("!!!").reason, REASON_MALFORMED)
        self.assertTrue(self.gatekeeper.check_header(self.site_cap().to_header()).accepted)

    def test_epoch_rollover_resets_spent_set(self) -> None:
        cap = self.site_cap()
        self.gatekeeper.check(cap)
        self.now += 86400
        self.gatekeeper.check(self.site_cap())
        self.assertFalse(self.gatekeeper.rules.suppressor.is_nullified(cap.digest()))

    def test_verdict_to_dict(self) -> None:
        data = self.gatekeeper.check_header(None).to_dict()
        self.assertEqual(data["reason"], REASON_MISSING)
        self.assertFalse(data["accepted"])


if __name__ == "__main__":
    unittest.main()
