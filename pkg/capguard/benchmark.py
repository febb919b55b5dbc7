"""
Benchmark

Median wall-clock cost of each blind-signature step. Absolute timings
depend on the machine; what must hold everywhere is the ordering: an AA
signature dominates verification and the client's blind plus unblind.
"""

import logging
import secrets
import time
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .blind_signature import AAKeyPair, blind, blind_sign, unblind, verify_raw
from .exceptions import SigningKeyError
from .tokens import TokenKind, TokenPayload

logger = logging.getLogger(__name__)

OPERATIONS = ("keygen", "blind", "sign", "unblind", "verify")


@dataclass(frozen=True)
class BenchmarkResult:
    bits: int
    samples: int
    medians_s: Dict[str, float]

    @property
    def ordering_holds(self) -> bool:
        m = self.medians_s
        return m["verify"] < m["sign"] and m["blind"] + m["unblind"] < m["sign"]

    def to_dict(self) -> Dict[str, object]:
        return {
            "bits": self.bits,
            "samples": self.samples,
            "median_us": {op: round(v * 1e6, 3) for op, v in self.medians_s.items()},
            "ordering_holds": self.ordering_holds,
        }


def run_benchmark(
    bits: int = 2048,
    samples: int = 200,
    keygen_samples: int = 3,
    clock: Callable[[], float] = time.perf_counter,
) -> BenchmarkResult:
    """
    Time every step of one issue round trip

    Args:
        bits: Modulus length (1024 or 2048)
        samples: Round trips timed for blind, sign, unblind and verify
        keygen_samples: Key pairs generated for the keygen median

    Returns:
        BenchmarkResult
    """
    timings: Dict[str, List[float]] = {op: [] for op in OPERATIONS}
    keys = None
    for _ in range(max(1, keygen_samples)):
        start = clock()
        keys = AAKeyPair.generate(bits=bits, now=0)
        timings["keygen"].append(clock() - start)
    assert keys is not None
    signing_key = keys.key_for(TokenKind.SITE)
    public = signing_key.public
    epoch_value = secrets.token_bytes(32)
    for _ in range(samples):
        payload = TokenPayload.for_site("bench.example", epoch_value, keys.fingerprint)

        start = clock()
        blinded, context = blind(payload, public, TokenKind.SITE)
        timings["blind"].append(clock() - start)

        start = clock()
        signature = blind_sign(blinded, signing_key, TokenKind.SITE)
        timings["sign"].append(clock() - start)

        start = clock()
        cap = unblind(signature, context, public)
        timings["unblind"].append(clock() - start)

        start = clock()
        ok = verify_raw(cap, public)
        timings["verify"].append(clock() - start)
        if not ok:
            raise SigningKeyError("Benchmark round trip produced an invalid capability")
    medians = {op: float(np.median(values)) for op, values in timings.items()}
    logger.info(
        "Benchmark %d bits: %s",
        bits,
        ", ".join(f"{op}={v * 1e6:.1f}us" for op, v in medians.items()),
    )
    return BenchmarkResult(bits, samples, medians)
