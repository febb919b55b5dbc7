"""
Site Gatekeeper Middleware

Installs capability checking in front of a Flask application. Every request
must carry a site capability in X-Capability; rejected requests get a 401
with the failing rule, a reason code and whether the capability is now
nullified. Accepted requests pass through the enforcement scheduler.
"""

import logging
import threading
import time
from itertools import count
from typing import Callable, Iterable, Optional

from flask import Flask, g, jsonify, request

from .gatekeeper import Gatekeeper
from .scheduler import EnforcementMode, EnforcementStrategy, FluidScheduler, Request
from .tokens import Capability

logger = logging.getLogger(__name__)

CAPABILITY_HEADER = "X-Capability"
NULLIFIED_HEADER = "X-Capability-Nullified"
UNKNOWN_SEED_TYPE = "unknown"


class SiteGuard:
    """Validate, spend and schedule one incoming request at a time"""

    def __init__(
        self,
        gatekeeper: Gatekeeper,
        strategy: Optional[EnforcementStrategy] = None,
        clock: Optional[Callable[[], float]] = None,
    ) -> None:
        self.gatekeeper = gatekeeper
        self.strategy = strategy or EnforcementStrategy()
        self.clock = clock or time.monotonic
        self.scheduler = FluidScheduler(self.strategy, start=self.clock())
        self._lock = threading.Lock()
        self._ids = count()
        self.stats = {"accepted": 0, "rejected": 0, "dropped": 0}

    def admit(self, seed_type: str) -> bool:
        """Offer an accepted request to the scheduler; False means backpressure"""
        with self._lock:
            req = Request(self.clock(), seed_type, next(self._ids))
            decision = self.scheduler.offer(req)
        if not decision.admitted:
            self.stats["dropped"] += 1
        return decision.admitted


def protect(
    app: Flask,
    guard: SiteGuard,
    exempt_paths: Iterable[str] = ("/health",),
) -> Flask:
    """
    Attach the capability check to app

    Args:
        app: Flask application to protect
        guard: Site guard
        exempt_paths: Paths served without a capability

    Returns:
        The same application
    """
    exempt = set(exempt_paths)

    @app.before_request
    def require_capability():  # type: ignore[no-untyped-def]
        if request.path in exempt or request.method == "OPTIONS":
            return None
        header = request.headers.get(CAPABILITY_HEADER)
        verdict = guard.gatekeeper.check_header(header)
        if not verdict.accepted:
            guard.stats["rejected"] += 1
            logger.debug("Rejected request to %s: %s", request.path, verdict.reason)
            body = {
                "error": verdict.reason,
                "rule": verdict.rule,
                "nullified": verdict.nullified,
            }
            return jsonify(body), 401

        seed_type = UNKNOWN_SEED_TYPE
        if header:
            cap = Capability.from_header(header)
            seed_type = guard.gatekeeper.seed_type_of(cap) or UNKNOWN_SEED_TYPE
        if guard.strategy.mode != EnforcementMode.BASIC and not guard.admit(seed_type):
            return (
                jsonify({"error": "overloaded", "seed_type": seed_type}),
                503,
                {"Retry-After": "1"},
            )
        guard.stats["accepted"] += 1
        g.capability_nullified = verdict.nullified
        return None

    @app.after_request
    def report_nullification(response):  # type: ignore[no-untyped-def]
        nullified = getattr(g, "capability_nullified", None)
        if nullified is not None:
            response.headers[NULLIFIED_HEADER] = "true" if nullified else "false"
        response.headers["Access-Control-Allow-Headers"] = CAPABILITY_HEADER
        response.headers["Access-Control-Expose-Headers"] = NULLIFIED_HEADER
        return response

    return app


def create_site_app(guard: SiteGuard, domain: str) -> Flask:
    """Small protected site used by `capguard serve site` and the tests"""
    app = Flask(__name__)

    @app.route("/", methods=["GET"])
    def index():  # type: ignore[no-untyped-def]
        return jsonify({"site": domain, "message": "served"})

    @app.route("/resource/<name>", methods=["GET"])
    def resource(name: str):  # type: ignore[no-untyped-def]
        return jsonify({"site": domain, "resource": name})

    @app.route("/health", methods=["GET"])
    def health():  # type: ignore[no-untyped-def]
        return jsonify({"status": "ok", "site": domain, **guard.stats})

    return protect(app, guard)
