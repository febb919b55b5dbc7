"""
Service Integration Tests

A client drives the AA, site and relay gatekeepers over real sockets.
"""

import unittest
from random import Random
from typing import Dict, Optional

from capguard.aa_client import AAClient
from capguard.blind_signature import AADirectory
from capguard.client import CapguardClient, MockSeedProvider, TCPRelayEndpoint
from capguard.exceptions import CircuitError, RateLimitedError
from capguard.gatekeeper import Gatekeeper, ValidationRules
from capguard.relay import SimulatedRelay
from capguard.service_runner import RunningService, ServiceRunner, build_epoch_beacon
from capguard.tokens import TokenKind, domain_scope
from capguard.wallet import ClientWallet

from ..service_config import RELAY_FINGERPRINT, ConfiguredTestCase

SECRET = "test-captcha"


def url(service: RunningService) -> str:
    return f"http://{service.host}:{service.port}"


class ServicesTestCase(ConfiguredTestCase):
    """AA, site and relay started from one config file"""

    def setUp(self) -> None:
        super().setUp()
        self.runner = ServiceRunner(["aa", "site", "relay"])
        self.services: Dict[str, RunningService] = self.runner.start()

    def tearDown(self) -> None:
        """Test cleanup"""
        self.runner.stop()
        super().tearDown()

    def make_client(self, wallet: Optional[ClientWallet] = None) -> CapguardClient:
        return CapguardClient(
            AAClient(url(self.services["aa"])),
            wallet=wallet,
            seed_provider=MockSeedProvider(SECRET),
        )

    def simulated_relay(self, fingerprint: bytes) -> SimulatedRelay:
        assert self.runner.authority is not None
        directory = AADirectory()
        directory.register(self.runner.authority.keyring.current.public_keys())
        rules = ValidationRules.for_relay(fingerprint, directory, build_epoch_beacon())
        return SimulatedRelay(fingerprint, Gatekeeper(rules, rng=Random(0)))


class TestSiteAccess(ServicesTestCase):
    def test_acquire_and_spend(self) -> None:
        client = self.make_client()
        caps = client.acquire("site.test", count=2)
        self.assertEqual(len(caps), 2)

        first = client.spend(url(self.services["site"]) + "/resource/a", "site.test", "c1")
        self.assertEqual(first.status_code, 200)
        self.assertEqual(first.json()["resource"], "a")
        second = client.spend(url(self.services["site"]) + "/", "site.test", "c2")
        self.assertEqual(second.status_code, 200)
        self.assertEqual(client.wallet.count(domain_scope("site.test"), TokenKind.SITE), 0)

    def test_replayed_capability_rejected(self) -> None:
        client = self.make_client()
        (cap,) = client.acquire("site.test")
        site = url(self.services["site"])
        headers = {"X-Capability": cap.to_header()}
        session = client.aa.session
        self.assertEqual(session.get(site + "/", headers=headers, timeout=5).status_code, 200)
        replay = session.get(site + "/", headers=headers, timeout=5)
        self.assertEqual(replay.status_code, 401)
        self.assertEqual(replay.json()["reason"], "nullified")

    def test_wrong_site_rejected(self) -> None:
        client = self.make_client()
        client.acquire("other.test")
        response = client.spend(url(self.services["site"]) + "/", "other.test")
        self.assertEqual(response.status_code, 401)
        self.assertEqual(response.json()["rule"], "ii")


class TestCircuits(ServicesTestCase):
    def test_circuit_through_tcp_guard(self) -> None:
        guard = self.services["relay"]
        hops = [
            TCPRelayEndpoint(bytes.fromhex(RELAY_FINGERPRINT), guard.host, guard.port),
            self.simulated_relay(b"\x02" * 20),
            self.simulated_relay(b"\x03" * 20),
        ]
        circuit = self.make_client().build_circuit(hops)
        self.assertEqual(len(circuit.capabilities), 3)
        self.assertEqual(circuit.relays[0].hex(), RELAY_FINGERPRINT)

    def test_relay_refuses_foreign_scope(self) -> None:
        guard = self.services["relay"]
        hops = [
            TCPRelayEndpoint(b"\x09" * 20, guard.host, guard.port),
            self.simulated_relay(b"\x02" * 20),
            self.simulated_relay(b"\x03" * 20),
        ]
        with self.assertRaises(CircuitError) as ctx:
            self.make_client().build_circuit(hops)
        self.assertEqual(ctx.exception.hop, 1)
        self.assertEqual(ctx.exception.reason, "scope_mismatch")


class TestRestart(ServicesTestCase):
    def test_bucket_survives_restart(self) -> None:
        client = self.make_client()
        client.acquire("site.test", count=3)
        wallet = client.wallet

        self.runner.stop()
        self.runner = ServiceRunner(["aa"])
        self.services = self.runner.start()

        # same pseudonym, fresh client-side pacing: only the AA's bucket stops it
        restarted = self.make_client(wallet)
        restarted.seed_provider = None
        with self.assertRaises(RateLimitedError) as ctx:
            restarted.acquire("site.test", count=2)
        self.assertEqual(ctx.exception.bucket, "site")
        self.assertEqual(wallet.count(domain_scope("site.test"), TokenKind.SITE), 4)


if __name__ == "__main__":
    unittest.main()
