"""
Site Middleware Tests

Tests for the Flask capability check, its error bodies and backpressure.
"""

import unittest
from random import Random

from capguard.blind_signature import AADirectory, AAKeyPair, blind, blind_sign, unblind
from capguard.epoch_beacon import EpochBeacon
from capguard.gatekeeper import Gatekeeper, ValidationRules
from capguard.scheduler import EnforcementMode, EnforcementStrategy
from capguard.site_app import (
    CAPABILITY_HEADER,
    NULLIFIED_HEADER,
    SiteGuard,
    create_site_app,
)
from capguard.tokens import Capability, TokenKind, TokenPayload

KEYS = AAKeyPair.generate(bits=1024, now=0.0, lifetime_s=10**9)
DOMAIN = "example.com"


class SiteAppTestCase(unittest.TestCase):
    strategy = EnforcementStrategy()

    def setUp(self) -> None:
        """Test setup"""
        beacon = EpochBeacon("epoch", 86400, clock=lambda: 5000.0)
        directory = AADirectory()
        directory.register(KEYS.public_keys())
        self.epoch = beacon.current().value
        gatekeeper = Gatekeeper(
            ValidationRules.for_site(DOMAIN, directory, beacon),
            weights={"captcha": 1.0},
            aa_seed_types={KEYS.fingerprint: "captcha"},
            rng=Random(0),
        )
        self.guard = SiteGuard(gatekeeper, self.strategy, clock=lambda: 0.0)
        app = create_site_app(self.guard, DOMAIN)
        app.config["TESTING"] = True
        self.client = app.test_client()

    def capability(self, domain: str = DOMAIN) -> str:
        payload = TokenPayload.for_site(domain, self.epoch, KEYS.fingerprint)
        public = KEYS.public_keys().site
        blinded, ctx = blind(payload, public, TokenKind.SITE)
        signed = blind_sign(blinded, KEYS.site_signing_key, TokenKind.SITE)
        cap: Capability = unblind(signed, ctx, public)
        return cap.to_header()


class TestProtect(SiteAppTestCase):
    """Test the before_request check"""

    def test_missing_capability(self) -> None:
        response = self.client.get("/")
        self.assertEqual(response.status_code, 401)
        body = response.get_json()
        self.assertEqual(body["error"], "missing_capability")
        self.assertFalse(body["nullified"])

    def test_malformed_capability(self) -> None:
        response = self.client.get("/", headers={CAPABILITY_HEADER: "not base64!"})
        self.assertEqual(response.status_code, 401)
        self.assertEqual(response.get_json()["error"], "malformed")

    def test_valid_then_reused(self) -> None:
        header = self.capability()
        response = self.client.get("/resource/a", headers={CAPABILITY_HEADER: header})
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.get_json()["resource"], "a")
        self.assertEqual(response.headers[NULLIFIED_HEADER], "true")

        again = self.client.get("/resource/a", headers={CAPABILITY_HEADER: header})
        self.assertEqual(again.status_code, 401)
        body = again.get_json()
        self.assertEqual((body["rule"], body["error"]), ("iv", "nullified"))
        self.assertTrue(body["nullified"])

    def test_wrong_site(self) -> None:
        response = self.client.get("/", headers={CAPABILITY_HEADER: self.capability("x.org")})
        self.assertEqual(response.status_code, 401)
        self.assertEqual(response.get_json()["rule"], "ii")

    def test_health_exempt(self) -> None:
        self.client.get("/")
        response = self.client.get("/health")
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.get_json()["rejected"], 1)
        self.assertNotIn(NULLIFIED_HEADER, response.headers)

    def test_cors_headers(self) -> None:
        response = self.client.get("/health")
        self.assertEqual(response.headers["Access-Control-Allow-Headers"], CAPABILITY_HEADER)


class TestBackpressure(SiteAppTestCase):
    """A full WFQ queue answers 503 with Retry-After"""

    strategy = EnforcementStrategy(
        mode=EnforcementMode.WFQ, r_max=1, weights={"captcha": 1.0}, queue_limit=1
    )

    def test_overloaded(self) -> None:
        first = self.client.get("/", headers={CAPABILITY_HEADER: self.capability()})
        self.assertEqual(first.status_code, 200)
        second = self.client.get("/", headers={CAPABILITY_HEADER: self.capability()})
        self.assertEqual(second.status_code, 503)
        self.assertEqual(second.headers["Retry-After"], "1")
        self.assertEqual(second.get_json()["seed_type"], "captcha")
        self.assertEqual(self.guard.stats["dropped"], 1)


if __name__ == "__main__":
    unittest.main()
