"""
Service Runner

Builds the access authority, site gatekeeper, relay gatekeeper and puzzle
beacon from config.yml and runs the requested roles in one process until a
signal arrives. HTTP roles run on werkzeug servers in threads; the relay runs
its asyncio server on a loop of its own.
"""

import asyncio
import logging
import signal
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from flask import Flask
from werkzeug.serving import BaseWSGIServer, make_server

from .aa_client import AAClient, BeaconClient
from .authority import AccessAuthority, MockSeedValidator, PuzzleSeedValidator, RateConfig
from .authority_app import create_app
from .beacon_app import PuzzleBeacon, create_beacon_app
from .blind_signature import AADirectory, AAKeyring
from .epoch_beacon import EpochBeacon
from .exceptions import ConfigError, ServiceError
from .gatekeeper import DuplicateSuppressor, Gatekeeper, ValidationRules
from .policy import SitePolicy
from .puzzles import DAKeySet, PuzzleSchedule, PuzzleSeed, SpentStubSet
from .relay import RelayServer
from .scheduler import EnforcementMode, EnforcementStrategy
from .settings import SERVICE_ROLES, Settings
from .site_app import SiteGuard, create_site_app
from .state_store import StateStore

logger = logging.getLogger(__name__)

# Start order: the AA and beacon must answer before gatekeepers fetch keys
START_ORDER = ("beacon", "aa", "site", "relay")


def build_epoch_beacon() -> EpochBeacon:
    return EpochBeacon(Settings.get_epoch_secret(), Settings.get_epoch_length())


def build_schedule() -> PuzzleSchedule:
    cfg = Settings.get_puzzle_config()
    return PuzzleSchedule(
        release_period_s=cfg["release_period_s"],
        acceptance_period_s=cfg["acceptance_period_s"],
        latency_allowance_s=cfg["latency_allowance_s"],
    )


def build_beacon() -> PuzzleBeacon:
    """Puzzle beacon with freshly generated simulated DA keys"""
    cfg = Settings.get_puzzle_config()
    return PuzzleBeacon(DAKeySet.generate(cfg["da_count"]), build_schedule(), cfg["quorum"])


def _remote_seeds(url: str, quorum: int) -> Callable[[int], PuzzleSeed]:
    beacon = BeaconClient(url)

    def seed_for(index: int) -> PuzzleSeed:
        return beacon.puzzle_seed(index, quorum)

    return seed_for


def build_authority(
    epochs: EpochBeacon, local_beacon: Optional[PuzzleBeacon] = None
) -> AccessAuthority:
    """
    Access authority with keys and state under data.dir

    Args:
        epochs: Epoch beacon
        local_beacon: Puzzle beacon served by the same process, used instead
            of aa.puzzle_beacon_url when present

    Returns:
        AccessAuthority
    """
    data_dir = Path(Settings.get_data_dir())
    fingerprint = Settings.get_aa_fingerprint()
    keyring = AAKeyring.load_or_create(
        data_dir / "keys",
        bits=Settings.get_aa_key_bits(),
        fingerprint=bytes.fromhex(fingerprint) if fingerprint else None,
    )
    store = StateStore(str(data_dir / "aa_state.db"))
    seed_type = Settings.get_aa_seed_type()
    if seed_type == "puzzle":
        cfg = Settings.get_puzzle_config()
        if local_beacon is not None:
            seed_source = local_beacon.seed_for
        else:
            seed_source = _remote_seeds(Settings.get_puzzle_beacon_url(), cfg["quorum"])
        validator: Any = PuzzleSeedValidator(
            keyring.current.fingerprint,
            build_schedule(),
            cfg["p_p"],
            seed_source,
            SpentStubSet(on_insert=store.mark_stub_spent, on_rotate=store.purge_stubs),
        )
    else:
        validator = MockSeedValidator(Settings.get_seed_secret(seed_type))
    return AccessAuthority(
        keyring,
        seed_type,
        validator,
        store,
        epochs,
        rates=RateConfig.from_dict(Settings.get_rate_config()),
        pseudonym_validity_s=Settings.get_pseudonym_validity(),
        trans_credit=Settings.get_trans_credit(),
    )


def build_directory(
    aa_urls: Sequence[str], local: Optional[AccessAuthority] = None
) -> Tuple[AADirectory, Dict[bytes, str]]:
    """
    Collect AA keys and seed types for a gatekeeper

    Unreachable AAs are skipped with a warning; capabilities they issue are
    then rejected as unknown.
    """
    directory = AADirectory()
    seed_types: Dict[bytes, str] = {}
    if local is not None:
        directory.register(local.keyring.current.public_keys())
        seed_types[local.fingerprint] = local.seed_type
    for url in aa_urls:
        try:
            entries, _ = AAClient(url).get_keys()
        except ServiceError as e:
            logger.warning("Could not load keys from %s: %s", url, e)
            continue
        for keys, seed_type in entries:
            directory.register(keys)
            if seed_type:
                seed_types[keys.fingerprint] = seed_type
    if not directory.fingerprints():
        logger.warning("Gatekeeper starts with no known AA; every capability will be rejected")
    return directory, seed_types


def build_site_guard(
    epochs: EpochBeacon, local: Optional[AccessAuthority] = None
) -> SiteGuard:
    """Site gatekeeper with the permissive weights of the configured policy"""
    cfg = Settings.get_site_config()
    rate = Settings.get_rate_config()
    policy = SitePolicy(
        epsilon=cfg["epsilon"],
        baseline_rate=cfg["baseline_rate"],
        identity_cost=cfg["identity_cost"],
        seed_costs=cfg["seed_costs"],
        seed_rates={s: rate["site_r"] for s in cfg["seed_costs"]},
    )
    try:
        mode = EnforcementMode(cfg["strategy"])
    except ValueError:
        raise ConfigError(f"site.strategy must be basic, rate_limit or wfq: {cfg['strategy']}")
    directory, seed_types = build_directory(cfg["aa_urls"], local)
    if cfg["expected_capabilities"]:
        suppressor = DuplicateSuppressor(expected_items=cfg["expected_capabilities"])
    else:
        suppressor = DuplicateSuppressor.for_baseline(
            policy.baseline_rate, rate["interval_s"], epochs.length_s
        )
    rules = ValidationRules.for_site(
        cfg["domain"],
        directory,
        epochs,
        customer_domains=cfg["customer_domains"],
        suppressor=suppressor,
    )
    gatekeeper = Gatekeeper(rules, weights=policy.weights, aa_seed_types=seed_types)
    return SiteGuard(gatekeeper, EnforcementStrategy(mode=mode, r_max=cfg["r_max"]))


def build_relay(epochs: EpochBeacon, local: Optional[AccessAuthority] = None) -> RelayServer:
    cfg = Settings.get_relay_config()
    try:
        fingerprint = bytes.fromhex(cfg["fingerprint"])
    except ValueError:
        raise ConfigError(f"relay.fingerprint is not hex: {cfg['fingerprint']}")
    directory, seed_types = build_directory(cfg["aa_urls"], local)
    suppressor = DuplicateSuppressor(expected_items=cfg["expected_capabilities"])
    rules = ValidationRules.for_relay(fingerprint, directory, epochs, suppressor=suppressor)
    gatekeeper = Gatekeeper(rules, aa_seed_types=seed_types)
    return RelayServer(gatekeeper, cfg["onionskin_cost_s"], cfg["congestion_threshold"])


class _RelayThread(threading.Thread):
    """Runs one RelayServer on a private event loop"""

    def __init__(self, relay: RelayServer, host: str, port: int) -> None:
        super().__init__(name="relay", daemon=True)
        self.relay = relay
        self.host = host
        self.port = port
        self.loop = asyncio.new_event_loop()
        self.started = threading.Event()
        self.error: Optional[BaseException] = None

    def run(self) -> None:
        asyncio.set_event_loop(self.loop)
        try:
            self.port = self.loop.run_until_complete(self.relay.start(self.host, self.port))
        except OSError as e:
            self.error = e
            self.started.set()
            return
        self.started.set()
        self.loop.run_forever()
        self.loop.run_until_complete(self.relay.stop())
        self.loop.close()

    def stop(self) -> None:
        if self.loop.is_running():
            self.loop.call_soon_threadsafe(self.loop.stop)


@dataclass
class RunningService:
    role: str
    host: str
    port: int
    server: Any
    thread: threading.Thread
    on_stop: List[Callable[[], None]] = field(default_factory=list)


class ServiceRunner:
    """Starts and stops the roles of one `capguard serve` invocation"""

    def __init__(self, roles: Sequence[str]) -> None:
        """
        Initialize service runner

        Args:
            roles: Roles to run (aa, site, relay, beacon)

        Raises:
            ConfigError: Unknown role, or two roles configured on one port
        """
        unknown = [r for r in roles if r not in SERVICE_ROLES]
        if unknown:
            raise ConfigError(f"Unknown role(s): {', '.join(unknown)}")
        if not roles:
            raise ConfigError("Nothing to serve: name at least one role")
        Settings.check_ports(list(roles))
        self.roles = [r for r in START_ORDER if r in roles]
        self.services: Dict[str, RunningService] = {}
        self.authority: Optional[AccessAuthority] = None
        self.beacon: Optional[PuzzleBeacon] = None
        self._stopped = threading.Event()

    def _serve_http(self, role: str, app: Flask) -> RunningService:
        address = Settings.get_listen_address(role)
        try:
            server: BaseWSGIServer = make_server(
                address["host"], address["port"], app, threaded=True
            )
        except OSError as e:
            raise ServiceError(
                f"Cannot listen on {address['host']}:{address['port']} for {role}: {e}"
            ) from e
        thread = threading.Thread(target=server.serve_forever, name=role, daemon=True)
        thread.start()
        logger.info("%s listening on %s:%d", role, address["host"], server.server_port)
        return RunningService(role, address["host"], server.server_port, server, thread)

    def _serve_relay(self, relay: RelayServer) -> RunningService:
        address = Settings.get_listen_address("relay")
        thread = _RelayThread(relay, address["host"], address["port"])
        thread.start()
        thread.started.wait()
        if thread.error is not None:
            raise ServiceError(
                f"Cannot listen on {address['host']}:{address['port']} for relay: {thread.error}"
            ) from thread.error
        return RunningService("relay", address["host"], thread.port, relay, thread)

    def start(self) -> Dict[str, RunningService]:
        """
        Start every role

        Returns:
            Running services by role

        Raises:
            ServiceError: A port is busy
        """
        epochs = build_epoch_beacon()
        try:
            for role in self.roles:
                if role == "beacon":
                    self.beacon = build_beacon()
                    app = create_beacon_app(self.beacon, epochs)
                    self.services[role] = self._serve_http(role, app)
                elif role == "aa":
                    self.authority = build_authority(epochs, self.beacon)
                    service = self._serve_http(role, create_app(self.authority))
                    store = self.authority.store
                    service.on_stop.append(
                        lambda: logger.info("AA state at shutdown: %s", store.get_stats())
                    )
                    self.services[role] = service
                elif role == "site":
                    guard = build_site_guard(epochs, self.authority)
                    domain = Settings.get_site_config()["domain"]
                    self.services[role] = self._serve_http(role, create_site_app(guard, domain))
                elif role == "relay":
                    self.services[role] = self._serve_relay(build_relay(epochs, self.authority))
        except Exception:
            self.stop()
            raise
        return self.services

    def stop(self) -> None:
        """Stop every role in reverse start order"""
        for role in reversed(list(self.services)):
            service = self.services.pop(role)
            if isinstance(service.thread, _RelayThread):
                service.thread.stop()
            else:
                service.server.shutdown()
            service.thread.join(timeout=5)
            for hook in service.on_stop:
                hook()
            logger.info("%s stopped", role)
        self._stopped.set()

    def wait(self) -> None:
        """Block until SIGINT or SIGTERM, then stop"""

        def handle(signum: int, frame: Any) -> None:
            logger.info("Received signal %d, shutting down", signum)
            self._stopped.set()

        previous = {s: signal.signal(s, handle) for s in (signal.SIGINT, signal.SIGTERM)}
        try:
            while not self._stopped.wait(0.5):
                pass
        finally:
            for s, handler in previous.items():
                signal.signal(s, handler)
            self.stop()
