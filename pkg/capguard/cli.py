#!/usr/bin/env python3
"""
capguard - Capability issuance and abuse throttling for Tor-routed traffic

CLI interface for running the access authority and gatekeepers, driving the
client SDK, deriving policies, simulating abuse and regenerating the
evaluation datasets.
"""

import argparse
import logging
import sys
import traceback
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
import yaml
from dotenv import load_dotenv

from .aa_client import AAClient, BeaconClient
from .capacity_planner import (
    DEFAULT_SIGN_COST_S,
    plan_botnet_capacity,
    plan_capacity,
)
from .client import CapguardClient, MockSeedProvider, PuzzleSeedProvider, TCPRelayEndpoint
from .client import os_exchange
from .exceptions import (
    CapguardError,
    CircuitError,
    ConfigError,
    PolicyError,
    RateLimitedError,
    SeedRejectedError,
    ServiceError,
    SimulationError,
    TransRejectedError,
)
from .policy import (
    NORMALIZATION_INTERVAL_S,
    CircuitPolicy,
    SitePolicy,
    anonymity_degree,
    default_site_policy,
    load_policy_file,
    verify_theta_bound,
)
from .report_exporter import ReportExporter
from .reproduce import DDOS_BASELINE_FAILURE, DDOS_LEGIT_CLIENTS, DDOS_SIZES, POLICY_CIRCUITS
from .reproduce import TARGETS, ddos_network, reproduce
from .scheduler import EnforcementMode, EnforcementStrategy
from .service_runner import ServiceRunner, build_schedule
from .settings import SERVICE_ROLES, Settings
from .simulator import circuit_policy, load_scenario, run_scenario
from .sweeps import DDOS_BOT_RATE, ddos_sweep, policy_curve
from .tokens import TRANS_SCOPE, TokenKind, relay_scope
from .wallet import ClientWallet, SpendingStrategy

EXIT_OK = 0
EXIT_PARAMETER = 1
EXIT_SERVICE = 2
EXIT_THRESHOLD = 3
EXIT_UNEXPECTED = 4
EXIT_INTERRUPTED = 130

_debug = False


def _debug_print(message: str) -> None:
    if _debug:
        print(f"🐛 {message}")


def create_argument_parser() -> argparse.ArgumentParser:
    """
    Create command-line argument parser with subcommands

    Returns:
        Argument parser
    """
    parser = argparse.ArgumentParser(
        description=(
            "capguard - capability issuance and abuse throttling for Tor-routed traffic"
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Example usage:
  uv run capguard serve aa site
  uv run capguard client acquire --domain example.com --count 5
  uv run capguard client spend http://127.0.0.1:8441/ --domain example.com
  uv run capguard policy derive --site --epsilon 0.1
  uv run capguard sim ddos --seed 1 --quick
  uv run capguard reproduce fig4 sizing --out out/
        """,
    )

    # Global arguments
    parser.add_argument(
        "--version",
        action="version",
        version=f"{Settings.PROJECT_NAME} {Settings.PROJECT_VERSION}",
    )
    parser.add_argument(
        "--debug",
        action="store_true",
        help="Enable debug output (service logs at DEBUG, tracebacks on errors)",
    )
    parser.add_argument(
        "--verbose",
        "-v",
        action="store_true",
        help="Verbose output",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # Serve command
    serve_parser = subparsers.add_parser(
        "serve",
        help="Run one or more services",
        description="Run the AA, site gatekeeper, relay gatekeeper or puzzle beacon",
    )
    serve_parser.add_argument(
        "roles",
        nargs="+",
        choices=SERVICE_ROLES,
        help="Roles to run in this process",
    )

    # Client command
    client_parser = subparsers.add_parser(
        "client",
        help="Acquire and spend capabilities",
        description="Client SDK verbs against a running AA",
    )
    client_parser.add_argument(
        "--aa",
        type=str,
        default=None,
        help="AA base URL (default: client.aa_url from config.yml)",
    )
    client_parser.add_argument(
        "--wallet",
        type=str,
        default=None,
        help="Wallet file (default: client.wallet_path from config.yml)",
    )
    client_parser.add_argument(
        "--seed-type",
        choices=["captcha", "puzzle", "ttp"],
        default="captcha",
        help="Seed type used when no pseudonym is live (default: captcha)",
    )
    verbs = client_parser.add_subparsers(dest="verb", required=True)

    acquire_parser = verbs.add_parser("acquire", help="Obtain capabilities")
    scope = acquire_parser.add_mutually_exclusive_group(required=True)
    scope.add_argument("--domain", type=str, help="Site domain")
    scope.add_argument("--relay", type=str, help="Relay fingerprint (hex)")
    scope.add_argument("--trans", action="store_true", help="Trans-capability")
    acquire_parser.add_argument("--count", type=int, default=1, help="Number to acquire")

    spend_parser = verbs.add_parser("spend", help="GET a URL presenting a capability")
    spend_parser.add_argument("url", type=str, help="URL to fetch")
    spend_parser.add_argument("--domain", type=str, required=True, help="Site domain")
    spend_parser.add_argument(
        "--connection", type=str, default="default", help="Connection identifier"
    )

    circuit_parser = verbs.add_parser("circuit", help="Build a three-hop circuit")
    circuit_parser.add_argument(
        "--hop",
        action="append",
        required=True,
        metavar="FINGERPRINT@HOST:PORT",
        help="Relay gatekeeper, given three times (guard, middle, exit)",
    )
    circuit_parser.add_argument(
        "--use-credit", action="store_true", help="Pay with trans-redemption credit"
    )

    exchange_parser = verbs.add_parser(
        "os-exchange", help="Hand a trans-capability to an onion service"
    )
    exchange_parser.add_argument(
        "--service-wallet",
        type=str,
        required=True,
        help="Wallet file of the onion service",
    )

    # Policy command
    policy_parser = subparsers.add_parser(
        "policy",
        help="Derive and check policies",
        description="Site weights, relay issuance rates and anonymity degree",
    )
    policy_verbs = policy_parser.add_subparsers(dest="verb", required=True)

    derive_parser = policy_verbs.add_parser("derive", help="Derive a site or Tor policy")
    kind = derive_parser.add_mutually_exclusive_group(required=True)
    kind.add_argument("--site", action="store_true", help="Site weights w_i")
    kind.add_argument("--tor", action="store_true", help="Relay issuance rates q_i")
    derive_parser.add_argument("--file", type=str, default=None, help="Policy YAML file")
    derive_parser.add_argument("--epsilon", type=float, default=0.1)
    derive_parser.add_argument("--baseline-rate", type=float, default=100.0)
    derive_parser.add_argument("--identity-cost", type=float, default=1.0)
    derive_parser.add_argument("--seed-rate", type=float, default=24.0)
    derive_parser.add_argument("--max-circuit-rate", type=float, default=POLICY_CIRCUITS)
    derive_parser.add_argument(
        "--output", type=str, default=None, help="Write the derived policy as YAML"
    )

    theta_parser = policy_verbs.add_parser("theta", help="Check the adversary rate bound")
    theta_parser.add_argument("--k", type=float, default=0.5, help="Cost ratio c_0'/c_1'")
    theta_parser.add_argument("--epsilon", type=float, default=0.1)
    theta_parser.add_argument("--resolution", type=int, default=1000)

    anonymity_parser = policy_verbs.add_parser("anonymity", help="Degree of anonymity")
    anonymity_parser.add_argument("upgraded", type=int, help="Upgraded clients N_T")
    anonymity_parser.add_argument("total", type=int, help="All clients N")

    # Sim command
    sim_parser = subparsers.add_parser(
        "sim",
        help="Run abuse simulations",
        description="Circuit-failure simulations and adversary investment curves",
    )
    sim_verbs = sim_parser.add_subparsers(dest="verb", required=True)

    run_parser = sim_verbs.add_parser("run", help="Run one scenario file")
    run_parser.add_argument("scenario", type=str, help="Scenario YAML file")
    run_parser.add_argument("--stem", type=str, default=None, help="Output file stem")

    ddos_parser = sim_verbs.add_parser("ddos", help="Failure rate against botnet size")
    ddos_parser.add_argument("--bot-rate", type=float, default=DDOS_BOT_RATE)
    ddos_parser.add_argument("--legit-clients", type=float, default=DDOS_LEGIT_CLIENTS)
    ddos_parser.add_argument("--baseline-failure", type=float, default=DDOS_BASELINE_FAILURE)
    ddos_parser.add_argument("--circuits", type=float, default=POLICY_CIRCUITS)
    ddos_parser.add_argument(
        "--sizes",
        type=float,
        nargs="+",
        default=None,
        help="Botnet sizes per interval, ascending",
    )
    ddos_parser.add_argument("--workers", type=int, default=None)

    curve_parser = sim_verbs.add_parser("policy-curve", help="Adversary rate against investment")
    curve_parser.add_argument(
        "--mode",
        choices=[m.value for m in EnforcementMode] + ["all"],
        default="all",
    )
    curve_parser.add_argument("--k", type=float, default=0.5)
    curve_parser.add_argument("--epsilon", type=float, default=0.1)
    curve_parser.add_argument("--r-max", type=float, default=50.0)

    for sub in (run_parser, ddos_parser, curve_parser):
        sub.add_argument("--seed", type=int, default=None, help="RNG seed")
        sub.add_argument("--out", type=str, default=None, help="Output directory")
        sub.add_argument("--quick", action="store_true", help="Fewer points, for smoke runs")

    # Plan command
    plan_parser = subparsers.add_parser(
        "plan",
        help="Size AA signing capacity",
        description="Requests per second and cores needed by the AA",
    )
    plan_parser.add_argument("--clients", type=float, default=710_000)
    plan_parser.add_argument("--streams", type=float, default=24)
    plan_parser.add_argument("--circuits", type=float, default=4)
    plan_parser.add_argument("--interval", type=float, default=NORMALIZATION_INTERVAL_S)
    plan_parser.add_argument("--cost", type=float, default=DEFAULT_SIGN_COST_S)
    plan_parser.add_argument(
        "--bots", type=float, default=None, help="Also size for a botnet of this many members"
    )

    # Reproduce command
    reproduce_parser = subparsers.add_parser(
        "reproduce",
        help="Regenerate evaluation datasets",
        description="Write figure datasets and check them against their thresholds",
    )
    reproduce_parser.add_argument(
        "targets",
        nargs="+",
        choices=list(TARGETS) + ["all"],
        help="Figure ids",
    )
    reproduce_parser.add_argument("--seed", type=int, default=0)
    reproduce_parser.add_argument("--out", type=str, default=None, help="Output directory")
    reproduce_parser.add_argument("--quick", action="store_true")

    return parser


def print_banner() -> None:
    """Print program banner"""
    info = Settings.get_project_info()
    print("=" * 60)
    print(f"🛡️ {info['name']} v{info['version']}")
    print(f"📝 {info['description']}")
    print("=" * 60)


def configure_logging(debug_mode: bool, verbose: bool) -> None:
    """Service logging from config.yml, or a plain default without one"""
    try:
        Settings.configure_logging()
    except FileNotFoundError:
        logging.basicConfig(
            level=logging.INFO if verbose else logging.WARNING,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
    if debug_mode:
        logging.getLogger().setLevel(logging.DEBUG)


def _error_exit(error: BaseException, debug_mode: bool) -> int:
    """Print an error with its details and map it to an exit code"""
    if isinstance(error, (ConfigError, PolicyError, SimulationError, ValueError)):
        label, code = "Parameter error", EXIT_PARAMETER
    elif isinstance(error, FileNotFoundError):
        label, code = "Configuration error", EXIT_PARAMETER
    elif isinstance(error, RateLimitedError):
        label, code = "Rate limited", EXIT_SERVICE
    elif isinstance(
        error, (ServiceError, SeedRejectedError, CircuitError, TransRejectedError)
    ):
        label, code = "Service error", EXIT_SERVICE
    elif isinstance(error, CapguardError):
        label, code = "Error", EXIT_SERVICE
    else:
        label, code = "Unexpected error", EXIT_UNEXPECTED

    if code == EXIT_UNEXPECTED and not debug_mode:
        print("\n❌ An unexpected error occurred")
        print(f"   Error type: {type(error).__name__}")
        print("   Use --debug for detailed error information")
        return code
    print(f"\n❌ {label}: {error}")
    for attr in ("line", "path", "reason", "retry_after", "hop", "status_code", "parameter"):
        value = getattr(error, attr, None)
        if value is not None:
            print(f"   {attr.replace('_', ' ').capitalize()}: {value}")
    if debug_mode:
        traceback.print_exc()
    elif code != EXIT_PARAMETER:
        print("   Use --debug for detailed error information")
    return code


def _out_dir(args: argparse.Namespace) -> str:
    return str(args.out or Settings.get_sim_config()["out_dir"])


# serve


def handle_serve_command(args: argparse.Namespace, debug_mode: bool) -> int:
    """
    Handle serve command.

    Args:
        args: Parsed arguments
        debug_mode: Enable debug mode

    Returns:
        Exit code
    """
    print_banner()
    checks = Settings.validate_config()
    print("\n📋 Configuration Check:")
    for name, value in checks.items():
        if isinstance(value, bool):
            print(f"  {'✅' if value else '⚠️'} {name}")
        else:
            print(f"     {value}")
    if not checks.get("config_file", False):
        raise ConfigError(str(checks.get("config_file_error", "config.yml could not be read")))

    runner = ServiceRunner(args.roles)
    print("\n🚀 Starting services...")
    services = runner.start()
    for role, service in services.items():
        print(f"  • {role}: {service.host}:{service.port}")
    print("\n✅ Services running (Ctrl-C to stop)")
    runner.wait()
    print("\n⏹️ Services stopped")
    return EXIT_OK


# client


def build_client(args: argparse.Namespace, wallet_path: Optional[str] = None) -> CapguardClient:
    """Client SDK instance for the configured AA and wallet"""
    aa_url = args.aa or Settings.get_client_aa_url()
    path = Path(wallet_path or args.wallet or Settings.get_wallet_path())
    wallet = ClientWallet.load(path, SpendingStrategy(Settings.get_spending_strategy()))
    aa = AAClient(aa_url, timeout=Settings.get_request_timeout())
    client = CapguardClient(aa, wallet, block_on_limit=True)
    if args.seed_type == "puzzle":
        cfg = Settings.get_puzzle_config()
        client.seed_provider = PuzzleSeedProvider(
            BeaconClient(Settings.get_puzzle_beacon_url()),
            client.fingerprint,
            cfg["p_p"],
            build_schedule(),
            cfg["quorum"],
        )
    else:
        client.seed_provider = MockSeedProvider(
            Settings.get_seed_secret(args.seed_type), args.seed_type
        )
    _debug_print(f"AA {aa_url}, wallet {path}")
    return client


def _parse_hop(text: str) -> TCPRelayEndpoint:
    try:
        fingerprint, address = text.split("@", 1)
        host, port = address.rsplit(":", 1)
        return TCPRelayEndpoint(bytes.fromhex(fingerprint), host, int(port))
    except ValueError as e:
        raise ValueError(f"Hop must look like FINGERPRINT@HOST:PORT, got '{text}'") from e


def handle_client_command(args: argparse.Namespace, debug_mode: bool) -> int:
    """
    Handle client verbs.

    Args:
        args: Parsed arguments
        debug_mode: Enable debug mode

    Returns:
        Exit code
    """
    client = build_client(args)
    try:
        if args.verb == "acquire":
            if args.count <= 0:
                raise ValueError("count must be greater than 0")
            if args.domain:
                caps = client.acquire(args.domain, TokenKind.SITE, args.count)
                target = args.domain
            elif args.relay:
                scope = relay_scope(bytes.fromhex(args.relay))
                caps = client.acquire(scope, TokenKind.RELAY, args.count)
                target = f"relay {args.relay}"
            else:
                caps = client.acquire(TRANS_SCOPE, TokenKind.TRANS, args.count)
                target = "trans"
            print(f"\n✅ Acquired {len(caps)} capabilities for {target}")

        elif args.verb == "spend":
            response = client.spend(args.url, args.domain, args.connection)
            marker = "✅" if response.status_code < 400 else "❌"
            print(f"\n{marker} {args.url} answered {response.status_code}")
            _debug_print(response.text)
            if response.status_code >= 400:
                return EXIT_SERVICE

        elif args.verb == "circuit":
            hops = [_parse_hop(h) for h in args.hop]
            circuit = client.build_circuit(hops, use_credit=args.use_credit)
            print("\n✅ Circuit established")
            for hop, fingerprint in enumerate(circuit.relays, start=1):
                print(f"  • hop {hop}: {fingerprint.hex()}")

        elif args.verb == "os-exchange":
            service = build_client(args, wallet_path=args.service_wallet)
            try:
                credit_id, remaining = os_exchange(client, service)
            finally:
                service.wallet.save()
            print(f"\n✅ Onion service holds credit {credit_id[:12]}… for {remaining} relays")
    finally:
        client.wallet.save()
    return EXIT_OK


# policy


def _derive(args: argparse.Namespace) -> Dict[str, Any]:
    if args.file:
        loaded = load_policy_file(args.file)
        if args.site and not isinstance(loaded, SitePolicy):
            raise PolicyError(f"{args.file} holds a tor policy, not a site policy")
        if args.tor and not isinstance(loaded, CircuitPolicy):
            raise PolicyError(f"{args.file} holds a site policy, not a tor policy")
        return {"site" if args.site else "tor": loaded.to_dict()}
    if args.site:
        site = default_site_policy(
            args.epsilon, args.baseline_rate, args.identity_cost, args.seed_rate
        )
        return {"site": site.to_dict()}
    tor = CircuitPolicy(
        max_circuit_rate=args.max_circuit_rate,
        identity_cost=args.identity_cost,
        seed_costs={"captcha": args.identity_cost, "puzzle": args.identity_cost},
    )
    return {"tor": tor.to_dict()}


def handle_policy_command(args: argparse.Namespace, debug_mode: bool) -> int:
    """
    Handle policy verbs.

    Args:
        args: Parsed arguments
        debug_mode: Enable debug mode

    Returns:
        Exit code
    """
    if args.verb == "derive":
        derived = _derive(args)
        print("\n📋 Derived policy:")
        print(yaml.safe_dump(derived, sort_keys=True).rstrip())
        if args.output:
            Path(args.output).parent.mkdir(parents=True, exist_ok=True)
            with open(args.output, "w", encoding="utf-8") as f:
                yaml.safe_dump(derived, f, sort_keys=True)
            print(f"\n✅ Written to {args.output}")
        return EXIT_OK

    if args.verb == "theta":
        policy = default_site_policy(epsilon=args.epsilon)
        result = verify_theta_bound(policy, args.k, resolution=args.resolution)
        held = result.max_rate <= result.bound * (1 + 1e-9)
        print("\n📊 Adversary rate bound:")
        print(f"  • max r_a: {result.max_rate:.12f} at alpha_0 = {result.argmax_alpha0:.4f}")
        print(f"  • bound: {result.bound:.12f}")
        print(f"\n{'✅ Bound holds' if held else '❌ Bound violated'}")
        return EXIT_OK if held else EXIT_THRESHOLD

    degree = anonymity_degree(args.upgraded, args.total)
    print(f"\n📊 Degree of anonymity d({args.upgraded}, {args.total}) = {degree:.6f}")
    return EXIT_OK


# sim


def handle_sim_command(args: argparse.Namespace, debug_mode: bool) -> int:
    """
    Handle sim verbs.

    Args:
        args: Parsed arguments
        debug_mode: Enable debug mode

    Returns:
        Exit code
    """
    out_dir = _out_dir(args)
    seed = args.seed if args.seed is not None else 0
    exporter = ReportExporter(out_dir)

    if args.verb == "run":
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario.seed = args.seed
        if args.quick:
            scenario.target_attempts = min(scenario.target_attempts, 15_000)
        print(f"\n🚀 Running {args.scenario} (seed {scenario.seed})...")
        report = run_scenario(scenario)
        stem = args.stem or Path(args.scenario).stem
        paths = report.write(out_dir, stem)
        print(f"\n✅ Failure rate {report.failure_rate:.4f} over {report.attempts} attempts")
        print(f"  • Scale: {report.scale:g}")
        for path in paths:
            print(f"  • {path}")
        return EXIT_OK

    if args.verb == "ddos":
        baseline, relays, kappa = ddos_network(seed, args.legit_clients, args.baseline_failure)
        _debug_print(f"kappa {kappa:.6g}")
        sizes = args.sizes or (DDOS_SIZES[::2] if args.quick else DDOS_SIZES)
        workers = args.workers or int(Settings.get_sim_config()["workers"])
        attempts = 15_000 if args.quick else 60_000
        print(f"\n🚀 Sweeping {len(sizes)} botnet sizes (seed {seed})...")
        results = []
        for policy in (None, circuit_policy(args.circuits, baseline.t0)):
            results.append(
                ddos_sweep(
                    sizes,
                    relays,
                    baseline,
                    policy,
                    bot_rate=args.bot_rate,
                    seed=seed,
                    target_attempts=attempts,
                    workers=workers,
                )
            )
        frames = [r.to_frame() for r in results]
        path = exporter.export_frame(pd.concat(frames, ignore_index=True), f"ddos_seed{seed}.csv")
        for result in results:
            label = "defended" if result.defended else "undefended"
            crossing = result.crossing
            shown = f"{crossing:,.0f} bots" if crossing is not None else "never"
            print(f"  • {label}: crosses {result.threshold:.0%} at {shown}")
        print(f"\n✅ Written to {path}")
        return EXIT_OK

    modes = list(EnforcementMode) if args.mode == "all" else [EnforcementMode(args.mode)]
    policy = default_site_policy(epsilon=args.epsilon)
    grid = [300.0 * i for i in range(17)] if args.quick else None
    frames = []
    for mode in modes:
        strategy = EnforcementStrategy(mode=mode, r_max=args.r_max)
        curve = policy_curve(policy, strategy, k=args.k, grid=grid, seed=seed)
        frames.append(curve.to_frame())
        knees = ", ".join(f"{k:g}" for k in curve.knees) or "none"
        print(f"  • {mode.value}: knees at {knees}")
    filename = f"policy_curve_k{args.k:g}.csv"
    path = exporter.export_frame(pd.concat(frames, ignore_index=True), filename)
    print(f"\n✅ Written to {path}")
    return EXIT_OK


# plan


def handle_plan_command(args: argparse.Namespace, debug_mode: bool) -> int:
    """
    Handle plan command.

    Args:
        args: Parsed arguments
        debug_mode: Enable debug mode

    Returns:
        Exit code
    """
    plan = plan_capacity(args.clients, args.streams, args.circuits, args.interval, args.cost)
    print("\n📊 AA capacity:")
    print(f"  • Clients: {plan.clients:,.0f}")
    print(f"  • Requests per second: {plan.requests_per_s:,.1f}")
    print(f"  • Cores: {plan.cores}")
    if args.bots is not None:
        botnet = plan_botnet_capacity(args.bots, clients=args.clients, interval_s=args.interval)
        print("\n📊 Under a botnet requesting at the per-seed ceilings:")
        print(f"  • Bots: {args.bots:,.0f}")
        print(f"  • Requests per second: {botnet.requests_per_s:,.1f}")
        print(f"  • Cores: {botnet.cores}")
    return EXIT_OK


# reproduce


def handle_reproduce_command(args: argparse.Namespace, debug_mode: bool) -> int:
    """
    Handle reproduce command.

    Args:
        args: Parsed arguments
        debug_mode: Enable debug mode

    Returns:
        Exit code (3 when any threshold is missed)
    """
    targets = list(TARGETS) if "all" in args.targets else list(dict.fromkeys(args.targets))
    out_dir = _out_dir(args)
    all_passed = True
    for target in targets:
        print(f"\n🔍 Reproducing {target}...")
        result = reproduce(target, out_dir, seed=args.seed, quick=args.quick)
        for check in result.checks:
            marker = "✅" if check.passed else "❌"
            print(f"  {marker} {check.name}: {check.value} (want {check.threshold})")
        for path in result.files:
            _debug_print(f"wrote {path}")
        all_passed = all_passed and result.passed

    print("\n" + "=" * 60)
    if all_passed:
        print(f"✅ All thresholds met; datasets under {out_dir}")
        return EXIT_OK
    print(f"❌ Some thresholds were not met; datasets under {out_dir}")
    return EXIT_THRESHOLD


_HANDLERS = {
    "serve": handle_serve_command,
    "client": handle_client_command,
    "policy": handle_policy_command,
    "sim": handle_sim_command,
    "plan": handle_plan_command,
    "reproduce": handle_reproduce_command,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main function

    Returns:
        Exit code
    """
    global _debug
    load_dotenv()

    parser = create_argument_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 on --help/--version and 2 on bad usage
        return EXIT_OK if e.code in (0, None) else EXIT_PARAMETER
    debug_mode = bool(getattr(args, "debug", False))
    _debug = debug_mode

    command = getattr(args, "command", None)
    if command is None:
        print_banner()
        parser.print_help()
        return EXIT_PARAMETER

    try:
        configure_logging(debug_mode, args.verbose)
        return _HANDLERS[command](args, debug_mode)
    except KeyboardInterrupt:
        print("\n\n⏹️ User interrupted operation")
        return EXIT_INTERRUPTED
    except Exception as e:
        return _error_exit(e, debug_mode)


if __name__ == "__main__":
    sys.exit(main())
