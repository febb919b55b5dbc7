"""
Relay Gatekeeper Tests

Tests for extension frames, priority classes and the TCP relay service.
"""

import asyncio
import unittest
from random import Random
from typing import Optional

from capguard.blind_signature import AADirectory, AAKeyPair, blind, blind_sign, unblind
from capguard.epoch_beacon import EpochBeacon
from capguard.exceptions import FrameError
from capguard.gatekeeper import Gatekeeper, ValidationRules
from capguard.relay import (
    ExtendFrame,
    Priority,
    RelayQueues,
    RelayServer,
    SimulatedRelay,
    pack_message,
    read_frame,
    relay_extend,
    send_extend,
)
from capguard.tokens import Capability, TokenKind, TokenPayload

KEYS = AAKeyPair.generate(bits=1024, now=0.0, lifetime_s=10**9)
RELAY_FP = b"\x21" * 20


class RelayTestCase(unittest.TestCase):
    def setUp(self) -> None:
        """Test setup"""
        beacon = EpochBeacon("epoch", 86400, clock=lambda: 5000.0)
        directory = AADirectory()
        directory.register(KEYS.public_keys())
        self.epoch = beacon.current().value
        self.gatekeeper = Gatekeeper(
            ValidationRules.for_relay(RELAY_FP, directory, beacon), rng=Random(0)
        )

    def relay_cap(self, fingerprint: bytes = RELAY_FP) -> Capability:
        payload = TokenPayload.for_relay(fingerprint, self.epoch, KEYS.fingerprint)
        public = KEYS.public_keys().relay
        blinded, ctx = blind(payload, public, TokenKind.RELAY)
        signed = blind_sign(blinded, KEYS.relay_signing_key, TokenKind.RELAY)
        return unblind(signed, ctx, public)

    def frame(self, cap: Optional[Capability] = None, payload: bytes = b"onionskin") -> bytes:
        return ExtendFrame(cap.encode() if cap else None, payload).encode()


class TestExtendFrame(unittest.TestCase):
    def test_layout(self) -> None:
        data = ExtendFrame(b"cap", b"payload").encode()
        self.assertEqual(data[:3], b"\x01\x00\x03")
        self.assertEqual(ExtendFrame.decode(data), ExtendFrame(b"cap", b"payload"))

    def test_no_capability(self) -> None:
        self.assertIsNone(ExtendFrame.decode(ExtendFrame(None, b"x").encode()).capability)

    def test_malformed(self) -> None:
        with self.assertRaises(FrameError):
            ExtendFrame.decode(b"\x01\x00")
        with self.assertRaises(FrameError):
            ExtendFrame.decode(b"\x02\x00\x00")
        with self.assertRaises(FrameError) as ctx:
            ExtendFrame.decode(b"\x01\x00\x10abc")
        self.assertEqual(ctx.exception.offset, 3)


class TestRelayExtend(RelayTestCase):
    """Test relay_extend classification"""

    def test_valid_capability_is_high(self) -> None:
        decision = relay_extend(self.frame(self.relay_cap()), self.gatekeeper)
        self.assertTrue(decision.accepted)
        self.assertEqual(decision.priority, Priority.HIGH)

    def test_missing_capability_is_low(self) -> None:
        decision = relay_extend(self.frame(), self.gatekeeper)
        self.assertTrue(decision.accepted)
        self.assertEqual(decision.priority, Priority.LOW)

    def test_invalid_capability_rejected(self) -> None:
        decision = relay_extend(self.frame(self.relay_cap(b"\x22" * 20)), self.gatekeeper)
        self.assertFalse(decision.accepted)
        self.assertEqual(decision.reason, "scope_mismatch")

    def test_reused_capability_rejected(self) -> None:
        frame = self.frame(self.relay_cap())
        relay_extend(frame, self.gatekeeper)
        decision = relay_extend(frame, self.gatekeeper)
        self.assertFalse(decision.accepted)
        self.assertEqual(decision.rule, "iv")

    def test_garbage_capability(self) -> None:
        frame = ExtendFrame(b"\x01" * 10, b"x").encode()
        self.assertEqual(relay_extend(frame, self.gatekeeper).reason, "malformed")


class TestRelayQueues(unittest.TestCase):
    def test_high_first(self) -> None:
        queues = RelayQueues()
        queues.push(Priority.LOW, "l")
        queues.push(Priority.HIGH, "h")
        self.assertEqual(queues.pop(), (Priority.HIGH, "h"))
        self.assertEqual(queues.pop(), (Priority.LOW, "l"))

    def test_low_dropped_when_congested(self) -> None:
        queues = RelayQueues(congestion_threshold=2, low_limit=1)
        self.assertTrue(queues.push(Priority.LOW, 1))
        self.assertTrue(queues.push(Priority.HIGH, 2))
        self.assertTrue(queues.congested)
        self.assertFalse(queues.push(Priority.LOW, 3))
        self.assertTrue(queues.push(Priority.HIGH, 4))


class TestSimulatedRelay(RelayTestCase):
    def test_extend_serves(self) -> None:
        relay = SimulatedRelay(RELAY_FP, self.gatekeeper)
        relay.extend(self.frame(self.relay_cap()))
        relay.extend(self.frame())
        self.assertEqual(relay.served, [Priority.HIGH, Priority.LOW])

    def test_high_served_before_low(self) -> None:
        relay = SimulatedRelay(RELAY_FP, self.gatekeeper)
        relay.submit(self.frame())
        relay.submit(self.frame(self.relay_cap()))
        self.assertEqual(relay.serve_one(), Priority.HIGH)
        self.assertEqual(relay.serve_one(), Priority.LOW)
        self.assertIsNone(relay.serve_one())


class TestRelayServer(unittest.IsolatedAsyncioTestCase, RelayTestCase):
    """Test the TCP service on an ephemeral port"""

    async def asyncSetUp(self) -> None:
        self.server = RelayServer(self.gatekeeper, onionskin_cost_s=0.0)
        self.port = await self.server.start("127.0.0.1", 0)

    async def asyncTearDown(self) -> None:
        await self.server.stop()

    async def test_round_trips(self) -> None:
        cap = self.relay_cap()
        reply = await send_extend("127.0.0.1", self.port, ExtendFrame(cap.encode(), b"a"))
        self.assertEqual(reply["status"], "created")
        self.assertEqual(reply["priority"], "high")

        reply = await send_extend("127.0.0.1", self.port, ExtendFrame(cap.encode(), b"a"))
        self.assertEqual(reply["status"], "rejected")
        self.assertEqual(reply["reason"], "nullified")

        reply = await send_extend("127.0.0.1", self.port, ExtendFrame(None, b"a"))
        self.assertEqual(reply["priority"], "low")
        self.assertEqual(self.server.stats["high"], 1)
        self.assertEqual(self.server.stats["rejected"], 1)

    async def test_malformed_frame(self) -> None:
        reader, writer = await asyncio.open_connection("127.0.0.1", self.port)
        writer.write(pack_message(b"\x07"))
        await writer.drain()
        body = await read_frame(reader)
        writer.close()
        self.assertIn(b"malformed_frame", body)


if __name__ == "__main__":
    unittest.main()
