"""
Puzzle Beacon Service

Releases one quorum-signed puzzle seed per period on behalf of the
simulated directory authorities, and serves it together with the DA public
keys and the current epoch.
"""

import logging
import threading
import time
from typing import Callable, Dict, Optional

from flask import Flask, jsonify, request

from .epoch_beacon import EpochBeacon
from .exceptions import PuzzleError
from .puzzles import DEFAULT_QUORUM, DAKeySet, PuzzleSchedule, PuzzleSeed, release_seed

logger = logging.getLogger(__name__)


class PuzzleBeacon:
    """Seed cache keyed by period index"""

    def __init__(
        self,
        da_keys: DAKeySet,
        schedule: PuzzleSchedule,
        quorum: int = DEFAULT_QUORUM,
        clock: Optional[Callable[[], float]] = None,
        keep_periods: int = 4,
    ) -> None:
        """
        Initialize puzzle beacon

        Args:
            da_keys: Simulated DA signing keys
            schedule: Puzzle schedule
            quorum: Minimum number of DA pieces per seed
            clock: Time source
            keep_periods: Number of past seeds kept for late fetchers
        """
        if quorum > len(da_keys):
            raise PuzzleError(f"Quorum {quorum} exceeds the {len(da_keys)} DAs")
        self.da_keys = da_keys
        self.schedule = schedule
        self.quorum = quorum
        self.clock = clock or time.time
        self.keep_periods = keep_periods
        self._seeds: Dict[int, PuzzleSeed] = {}
        self._lock = threading.Lock()

    def seed_for(self, period_index: int) -> PuzzleSeed:
        """Return the seed of a period, releasing it on first use"""
        with self._lock:
            seed = self._seeds.get(period_index)
            if seed is None:
                seed = release_seed(self.da_keys, period_index, self.schedule, self.quorum)
                self._seeds[period_index] = seed
                logger.info(
                    "Released puzzle seed for period %d (%d pieces, h_k %s)",
                    period_index,
                    len(seed.pieces),
                    seed.h_k.hex()[:16],
                )
                for old in [i for i in self._seeds if i <= period_index - self.keep_periods]:
                    del self._seeds[old]
            return seed

    def current_seed(self) -> PuzzleSeed:
        return self.seed_for(self.schedule.period_index(self.clock()))


def create_beacon_app(beacon: PuzzleBeacon, epochs: Optional[EpochBeacon] = None) -> Flask:
    """
    Build the beacon application

    Args:
        beacon: Puzzle beacon
        epochs: Epoch beacon published at /epoch, if any

    Returns:
        Flask application
    """
    app = Flask(__name__)

    @app.route("/puzzle-seed", methods=["GET"])
    def puzzle_seed():  # type: ignore[no-untyped-def]
        period = request.args.get("period")
        if period is None:
            seed = beacon.current_seed()
        else:
            try:
                seed = beacon.seed_for(int(period))
            except ValueError:
                return jsonify({"error": "malformed", "field": "period"}), 400
        body = seed.to_dict()
        body["acceptance_period_s"] = beacon.schedule.acceptance_period_s
        body["release_period_s"] = beacon.schedule.release_period_s
        body["quorum"] = beacon.quorum
        return jsonify(body)

    @app.route("/da-keys", methods=["GET"])
    def da_keys():  # type: ignore[no-untyped-def]
        pems = beacon.da_keys.public_pems()
        return jsonify({"keys": {str(i): pem for i, pem in sorted(pems.items())}})

    @app.route("/epoch", methods=["GET"])
    def epoch():  # type: ignore[no-untyped-def]
        if epochs is None:
            return jsonify({"error": "no_epoch_beacon"}), 404
        return jsonify(epochs.epoch_at(epochs.clock()).to_dict())

    return app
