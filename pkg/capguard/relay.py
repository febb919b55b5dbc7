"""
Relay Gatekeeper

Circuit extension requests arrive as frames:

    version (1 byte) | capability length (2 bytes, big-endian) | capability | payload

The capability is checked before the payload is touched. A valid relay
capability puts the request in the HIGH class. A request without a
capability goes to the LOW class, which is served only when HIGH is empty,
so on an idle relay it is still served. A capability that is present but
fails validation is rejected with its rule.

Over TCP each frame is preceded by a 4-byte big-endian length and each
reply is a length-prefixed JSON object.
"""

import asyncio
import hashlib
import json
import logging
import struct
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Deque, Dict, Optional, Tuple

from .exceptions import FrameError, TokenEncodingError
from .gatekeeper import Gatekeeper, Verdict
from .tokens import Capability

logger = logging.getLogger(__name__)

FRAME_VERSION = 1
_HEADER = struct.Struct(">BH")
_LENGTH = struct.Struct(">I")
MAX_FRAME = 1 << 20


class Priority(str, Enum):
    HIGH = "high"
    LOW = "low"


@dataclass(frozen=True)
class ExtendFrame:
    capability: Optional[bytes]
    payload: bytes

    def encode(self) -> bytes:
        cap = self.capability or b""
        if len(cap) > 0xFFFF:
            raise FrameError("Capability longer than 65535 bytes")
        return _HEADER.pack(FRAME_VERSION, len(cap)) + cap + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "ExtendFrame":
        """
        Raises:
            FrameError: Short header, unknown version or truncated capability
        """
        if len(data) < _HEADER.size:
            raise FrameError(f"Frame shorter than its {_HEADER.size}-byte header", offset=0)
        version, cap_len = _HEADER.unpack_from(data)
        if version != FRAME_VERSION:
            raise FrameError(f"Unsupported frame version {version}", offset=0)
        end = _HEADER.size + cap_len
        if len(data) < end:
            raise FrameError(
                f"Capability truncated: need {cap_len} bytes, have {len(data) - _HEADER.size}",
                offset=_HEADER.size,
            )
        cap = data[_HEADER.size : end] if cap_len else None
        return cls(cap, data[end:])


@dataclass(frozen=True)
class ExtendDecision:
    """accepted with a priority class, or rejected with the failing rule"""

    accepted: bool
    priority: Optional[Priority] = None
    rule: Optional[str] = None
    reason: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accepted": self.accepted,
            "priority": self.priority.value if self.priority else None,
            "rule": self.rule,
            "reason": self.reason,
        }


def relay_extend(frame: bytes, gatekeeper: Gatekeeper) -> ExtendDecision:
    """
    Classify one extension request

    Args:
        frame: Encoded ExtendFrame
        gatekeeper: Gatekeeper configured with this relay's fingerprint scope

    Returns:
        ExtendDecision

    Raises:
        FrameError: Malformed frame
    """
    request = ExtendFrame.decode(frame)
    if request.capability is None:
        return ExtendDecision(True, Priority.LOW, reason="missing_capability")
    try:
        cap = Capability.decode(request.capability)
    except TokenEncodingError:
        return ExtendDecision(False, reason="malformed")
    verdict: Verdict = gatekeeper.check(cap)
    if not verdict.accepted:
        return ExtendDecision(False, rule=verdict.rule, reason=verdict.reason)
    return ExtendDecision(True, Priority.HIGH)


def process_onionskin(payload: bytes, cost_s: float) -> bytes:
    """Stand-in for onionskin processing: burn cost_s of CPU and return a digest"""
    digest = hashlib.sha256(payload).digest()
    deadline = time.perf_counter() + cost_s
    scratch = digest
    while time.perf_counter() < deadline:
        scratch = hashlib.sha256(scratch).digest()
    return digest


class RelayQueues:
    """HIGH and LOW FIFO queues with a congestion threshold"""

    def __init__(self, congestion_threshold: int = 32, low_limit: Optional[int] = None) -> None:
        self.congestion_threshold = congestion_threshold
        self.low_limit = low_limit if low_limit is not None else congestion_threshold
        self.high: Deque[Any] = deque()
        self.low: Deque[Any] = deque()

    def __len__(self) -> int:
        return len(self.high) + len(self.low)

    @property
    def congested(self) -> bool:
        return len(self) >= self.congestion_threshold

    def push(self, priority: Priority, item: Any) -> bool:
        """
        Returns:
            False if a LOW item was dropped because the relay is congested
        """
        if priority == Priority.HIGH:
            self.high.append(item)
            return True
        if self.congested and len(self.low) >= self.low_limit:
            return False
        self.low.append(item)
        return True

    def pop(self) -> Tuple[Priority, Any]:
        if self.high:
            return Priority.HIGH, self.high.popleft()
        return Priority.LOW, self.low.popleft()


class SimulatedRelay:
    """In-process relay used by build_circuit and the tests"""

    def __init__(
        self,
        fingerprint: bytes,
        gatekeeper: Gatekeeper,
        onionskin_cost_s: float = 0.0,
        congestion_threshold: int = 32,
    ) -> None:
        self.fingerprint = fingerprint
        self.gatekeeper = gatekeeper
        self.onionskin_cost_s = onionskin_cost_s
        self.queues = RelayQueues(congestion_threshold)
        self.served: list = []

    def submit(self, frame: bytes) -> ExtendDecision:
        """Classify a frame and queue it if accepted"""
        decision = relay_extend(frame, self.gatekeeper)
        if decision.accepted and decision.priority is not None:
            if not self.queues.push(decision.priority, frame):
                return ExtendDecision(False, reason="congested")
        return decision

    def serve_one(self) -> Optional[Priority]:
        if not len(self.queues):
            return None
        priority, frame = self.queues.pop()
        process_onionskin(ExtendFrame.decode(frame).payload, self.onionskin_cost_s)
        self.served.append(priority)
        return priority

    def extend(self, frame: bytes) -> ExtendDecision:
        """Submit and drain; what a client observes on an otherwise idle relay"""
        decision = self.submit(frame)
        while self.serve_one() is not None:
            pass
        return decision


# TCP service


async def read_frame(reader: asyncio.StreamReader) -> bytes:
    header = await reader.readexactly(_LENGTH.size)
    (length,) = _LENGTH.unpack(header)
    if length > MAX_FRAME:
        raise FrameError(f"Frame of {length} bytes exceeds limit", offset=0)
    return await reader.readexactly(length)


def pack_message(body: bytes) -> bytes:
    return _LENGTH.pack(len(body)) + body


class RelayServer:
    """asyncio TCP front end of one relay gatekeeper"""

    def __init__(
        self,
        gatekeeper: Gatekeeper,
        onionskin_cost_s: float = 0.001,
        congestion_threshold: int = 32,
    ) -> None:
        self.gatekeeper = gatekeeper
        self.onionskin_cost_s = onionskin_cost_s
        self.queues = RelayQueues(congestion_threshold)
        self.stats = {"high": 0, "low": 0, "rejected": 0, "dropped": 0, "malformed": 0}
        self._wakeup: Optional[asyncio.Event] = None
        self._server: Optional[asyncio.AbstractServer] = None
        self._worker: Optional[asyncio.Task] = None

    async def _work(self) -> None:
        assert self._wakeup is not None
        while True:
            if not len(self.queues):
                self._wakeup.clear()
                await self._wakeup.wait()
                continue
            priority, (payload, future) = self.queues.pop()
            digest = await asyncio.to_thread(process_onionskin, payload, self.onionskin_cost_s)
            self.stats[priority.value] += 1
            if not future.done():
                future.set_result(
                    {"status": "created", "priority": priority.value, "digest": digest.hex()[:16]}
                )

    async def _reply(self, writer: asyncio.StreamWriter, body: Dict[str, Any]) -> None:
        writer.write(pack_message(json.dumps(body, sort_keys=True).encode("utf-8")))
        await writer.drain()

    async def handle_client(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        peer = writer.get_extra_info("peername")
        try:
            while True:
                try:
                    frame = await read_frame(reader)
                except asyncio.IncompleteReadError:
                    break
                try:
                    decision = relay_extend(frame, self.gatekeeper)
                except FrameError as e:
                    self.stats["malformed"] += 1
                    reply = {"status": "rejected", "reason": "malformed_frame", "offset": e.offset}
                    await self._reply(writer, reply)
                    continue
                if not decision.accepted or decision.priority is None:
                    self.stats["rejected"] += 1
                    await self._reply(writer, {"status": "rejected", **decision.to_dict()})
                    continue
                future: asyncio.Future = asyncio.get_running_loop().create_future()
                payload = ExtendFrame.decode(frame).payload
                if not self.queues.push(decision.priority, (payload, future)):
                    self.stats["dropped"] += 1
                    await self._reply(writer, {"status": "dropped", "reason": "congested"})
                    continue
                assert self._wakeup is not None
                self._wakeup.set()
                await self._reply(writer, await future)
        except FrameError as e:
            logger.warning("Closing connection from %s: %s", peer, e)
        finally:
            writer.close()

    async def start(self, host: str, port: int) -> int:
        """Start listening; returns the bound port"""
        self._wakeup = asyncio.Event()
        self._worker = asyncio.create_task(self._work())
        self._server = await asyncio.start_server(self.handle_client, host, port)
        bound = int(self._server.sockets[0].getsockname()[1])
        logger.info("Relay gatekeeper listening on %s:%d", host, bound)
        return bound

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._worker is not None:
            self._worker.cancel()
            try:
                await self._worker
            except asyncio.CancelledError:
                pass


async def send_extend(
    host: str, port: int, frame: ExtendFrame, timeout: float = 10.0
) -> Dict[str, Any]:
    """Client side of the TCP relay protocol: one frame, one reply"""
    reader, writer = await asyncio.wait_for(asyncio.open_connection(host, port), timeout)
    try:
        writer.write(pack_message(frame.encode()))
        await writer.drain()
        body = await asyncio.wait_for(read_frame(reader), timeout)
        return dict(json.loads(body.decode("utf-8")))
    finally:
        writer.close()
