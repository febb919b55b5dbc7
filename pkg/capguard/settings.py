"""
Configuration Settings Loader

This module loads and formats configuration data from config.yml file.
All configuration values come from config.yml - this file only handles
loading, parsing, and formatting.

If config.yml does not exist, the user should copy config.yml.example to config.yml.
The CAPGUARD_CONFIG environment variable points at an alternative file.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .exceptions import ConfigError

_MISSING = object()

SERVICE_ROLES = ("aa", "site", "relay", "beacon")


class Settings:
    """Configuration settings loader class"""

    # Configuration file paths (relative to project root)
    CONFIG_FILE_PATH = Path(__file__).parent.parent / "config.yml"
    CONFIG_FILE_EXAMPLE_PATH = Path(__file__).parent.parent / "config.yml.example"
    CONFIG_FILE_ENV = "CAPGUARD_CONFIG"

    # Project basic information (not configurable)
    PROJECT_NAME = "capguard"
    PROJECT_VERSION = "1.0.0"
    PROJECT_DESCRIPTION = (
        "Anonymity-preserving capability issuance and abuse throttling for Tor-routed traffic"
    )

    # Configuration cache
    _config_cache: Optional[Dict[str, Any]] = None

    @classmethod
    def reload(cls) -> None:
        """Drop the cached configuration so the next read hits the file again"""
        cls._config_cache = None

    @classmethod
    def _get_config_file_path(cls) -> Path:
        """
        Get configuration file path

        Returns:
            Configuration file path
        """
        env_path = os.getenv(cls.CONFIG_FILE_ENV)
        if env_path:
            return Path(env_path)
        return cls.CONFIG_FILE_PATH

    @classmethod
    def _load_config_file(cls) -> Dict[str, Any]:
        """
        Load configuration from YAML file

        Returns:
            Configuration dictionary

        Raises:
            FileNotFoundError: If config.yml does not exist
            ConfigError: If the file is not valid YAML (carries the line number)
        """
        if cls._config_cache is not None:
            return cls._config_cache

        config_path = cls._get_config_file_path()

        if not config_path.exists():
            example_path = cls.CONFIG_FILE_EXAMPLE_PATH
            if example_path.exists():
                raise FileNotFoundError(
                    f"Configuration file {config_path} not found.\n"
                    f"Please copy {example_path} to {config_path} and configure it.\n"
                    f"Example: cp {example_path} {config_path}"
                )
            raise FileNotFoundError(
                f"Configuration file {config_path} not found.\n"
                f"Please create config.yml with your configuration."
            )

        try:
            with open(config_path, encoding="utf-8") as f:
                loaded = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            where = f" at line {line}, column {mark.column + 1}" if mark else ""
            raise ConfigError(
                f"Invalid YAML in {config_path}{where}: {getattr(e, 'problem', e)}",
                path=str(config_path),
                line=line,
            ) from e

        if not isinstance(loaded, dict):
            raise ConfigError(
                f"Configuration file {config_path} must contain a mapping at top level",
                path=str(config_path),
                line=1,
            )
        cls._config_cache = loaded
        return cls._config_cache

    @classmethod
    def _get_config_value(cls, path: str, default: Any = _MISSING) -> Any:
        """
        Get configuration value by path (e.g., "aa.fingerprint")

        Args:
            path: Configuration path (dot-separated)
            default: Value returned when the path is absent

        Returns:
            Configuration value

        Raises:
            KeyError: If configuration path does not exist and no default is given
        """
        config = cls._load_config_file()
        value: Any = config
        for key in path.split("."):
            if isinstance(value, dict) and value.get(key) is not None:
                value = value[key]
                continue
            if default is not _MISSING:
                return default
            raise KeyError(
                f"Configuration path '{path}' not found in config.yml. "
                f"Please add it to your configuration file."
            )
        return value

    # Access authority settings

    @classmethod
    def get_aa_fingerprint(cls) -> Optional[str]:
        """
        Get the configured AA fingerprint

        Returns:
            40-character hex fingerprint, or None to derive it from the first key
        """
        value = cls._get_config_value("aa.fingerprint", None)
        if value in (None, "", "auto"):
            return None
        text = str(value).lower()
        if len(text) != 40:
            raise ConfigError(
                f"aa.fingerprint must be 40 hex characters, got {len(text)}"
            )
        return text

    @classmethod
    def get_aa_seed_type(cls) -> str:
        """
        Get the single seed type this AA accepts

        Returns:
            One of captcha, puzzle, ttp
        """
        seed_type = str(cls._get_config_value("aa.seed_type"))
        if seed_type not in ("captcha", "puzzle", "ttp"):
            raise ConfigError(f"aa.seed_type must be captcha, puzzle or ttp: {seed_type}")
        return seed_type

    @classmethod
    def get_aa_key_bits(cls) -> int:
        """
        Get RSA modulus length for the AA signing keys

        Returns:
            Modulus length in bits
        """
        return int(cls._get_config_value("aa.key_bits", 2048))

    @classmethod
    def get_pseudonym_validity(cls) -> int:
        """
        Get pseudonym validity period

        Returns:
            Validity in seconds
        """
        return int(cls._get_config_value("aa.pseudonym_validity_s", 86400))

    @classmethod
    def get_trans_credit(cls) -> int:
        """
        Get relay issuance credits granted per redeemed trans-capability

        Returns:
            Number of relay pre-capabilities
        """
        return int(cls._get_config_value("aa.trans_credit", 3))

    @classmethod
    def get_seed_secret(cls, seed_type: str) -> str:
        """
        Get the shared secret of the mock seed validator

        Args:
            seed_type: captcha or ttp

        Returns:
            Shared secret string
        """
        return str(cls._get_config_value(f"aa.{seed_type}_secret"))

    @classmethod
    def get_puzzle_beacon_url(cls) -> str:
        """
        Get the puzzle beacon URL used by puzzle AAs

        Returns:
            Base URL
        """
        return str(cls._get_config_value("aa.puzzle_beacon_url", "http://127.0.0.1:8443"))

    # Rate limiting settings

    @classmethod
    def get_rate_config(cls) -> Dict[str, float]:
        """
        Get per-seed rate limiter configuration

        Returns:
            Dictionary with site_r, relay_q, interval_s, burst_window_s
        """
        return {
            "site_r": float(cls._get_config_value("rate.site_r", 24)),
            "relay_q": float(cls._get_config_value("rate.relay_q", 12)),
            "interval_s": float(cls._get_config_value("rate.interval_s", 600)),
            "burst_window_s": float(cls._get_config_value("rate.burst_window_s", 3600)),
        }

    # Epoch beacon settings

    @classmethod
    def get_epoch_length(cls) -> int:
        """
        Get epoch length

        Returns:
            Epoch length in seconds
        """
        return int(cls._get_config_value("epoch.length_s", 86400))

    @classmethod
    def get_epoch_secret(cls) -> str:
        """
        Get the mock epoch beacon secret

        Returns:
            Secret string
        """
        return str(cls._get_config_value("epoch.beacon_secret"))

    # Site gatekeeper settings

    @classmethod
    def get_site_config(cls) -> Dict[str, Any]:
        """
        Get site gatekeeper configuration

        Returns:
            Site configuration dictionary
        """
        customers = cls._get_config_value("site.customer_domains", [])
        expected = cls._get_config_value("site.expected_capabilities", None)
        return {
            "domain": str(cls._get_config_value("site.domain")),
            "customer_domains": [str(d) for d in customers],
            "epsilon": float(cls._get_config_value("site.epsilon", 0.1)),
            "baseline_rate": float(cls._get_config_value("site.baseline_rate", 100)),
            "identity_cost": float(cls._get_config_value("site.identity_cost", 1.0)),
            "seed_costs": {
                str(k): float(v)
                for k, v in dict(
                    cls._get_config_value("site.seed_costs", {"captcha": 1.0})
                ).items()
            },
            "strategy": str(cls._get_config_value("site.strategy", "basic")),
            "r_max": float(cls._get_config_value("site.r_max", 50)),
            "aa_urls": [str(u) for u in cls._get_config_value("site.aa_urls", [])],
            "expected_capabilities": int(expected) if expected is not None else None,
        }

    # Relay gatekeeper settings

    @classmethod
    def get_relay_config(cls) -> Dict[str, Any]:
        """
        Get relay gatekeeper configuration

        Returns:
            Relay configuration dictionary
        """
        return {
            "fingerprint": str(cls._get_config_value("relay.fingerprint")),
            "congestion_threshold": int(
                cls._get_config_value("relay.congestion_threshold", 32)
            ),
            "onionskin_cost_s": float(
                cls._get_config_value("relay.onionskin_cost_s", 0.001)
            ),
            "aa_urls": [str(u) for u in cls._get_config_value("relay.aa_urls", [])],
            "expected_capabilities": int(
                cls._get_config_value("relay.expected_capabilities", 1_000_000)
            ),
        }

    # Puzzles settings

    @classmethod
    def get_puzzle_config(cls) -> Dict[str, Any]:
        """
        Get puzzle system configuration

        Returns:
            Puzzle configuration dictionary
        """
        return {
            "release_period_s": float(
                cls._get_config_value("puzzle.release_period_s", 300)
            ),
            "acceptance_period_s": float(
                cls._get_config_value("puzzle.acceptance_period_s", 60)
            ),
            "p_p": float(cls._get_config_value("puzzle.p_p", 1e-4)),
            "quorum": int(cls._get_config_value("puzzle.quorum", 5)),
            "da_count": int(cls._get_config_value("puzzle.da_count", 9)),
            "latency_allowance_s": float(
                cls._get_config_value("puzzle.latency_allowance_s", 5)
            ),
        }

    # Client settings

    @classmethod
    def get_wallet_path(cls) -> str:
        """
        Get client wallet file path

        Returns:
            Wallet path (parent directory is created)
        """
        path = Path(str(cls._get_config_value("client.wallet_path", "data/wallet.yml")))
        path.parent.mkdir(parents=True, exist_ok=True)
        return str(path)

    @classmethod
    def get_spending_strategy(cls) -> str:
        """
        Get client capability spending strategy

        Returns:
            Strategy name
        """
        return str(
            cls._get_config_value("client.spending_strategy", "unique_per_connection")
        )

    @classmethod
    def get_client_aa_url(cls) -> str:
        """
        Get the AA the client acquires capabilities from

        Returns:
            Base URL
        """
        return str(cls._get_config_value("client.aa_url", "http://127.0.0.1:8440"))

    @classmethod
    def get_request_timeout(cls) -> float:
        """
        Get HTTP request timeout for client calls

        Returns:
            Timeout in seconds
        """
        return float(cls._get_config_value("client.request_timeout_s", 10))

    # Simulation settings

    @classmethod
    def get_sim_config(cls) -> Dict[str, Any]:
        """
        Get simulation and reproduction defaults

        Offline commands run without a config file, so a missing file yields
        the defaults.

        Returns:
            Dictionary with out_dir, workers, target_attempts
        """
        defaults: Dict[str, Any] = {"out_dir": "out", "workers": 1, "target_attempts": 120_000}
        try:
            cls._load_config_file()
        except FileNotFoundError:
            return defaults
        return {
            "out_dir": str(cls._get_config_value("sim.out_dir", defaults["out_dir"])),
            "workers": int(cls._get_config_value("sim.workers", defaults["workers"])),
            "target_attempts": float(
                cls._get_config_value("sim.target_attempts", defaults["target_attempts"])
            ),
        }

    # Services settings

    @classmethod
    def get_listen_address(cls, role: str) -> Dict[str, Any]:
        """
        Get host and port for a service role

        Args:
            role: One of aa, site, relay, beacon

        Returns:
            Dictionary with host and port
        """
        if role not in SERVICE_ROLES:
            raise ConfigError(f"Unknown service role: {role}")
        return {
            "host": str(cls._get_config_value(f"{role}.host", "127.0.0.1")),
            "port": int(cls._get_config_value(f"{role}.port")),
        }

    @classmethod
    def check_ports(cls, roles: List[str]) -> None:
        """
        Ensure the given roles listen on distinct ports

        Port 0 asks the OS for an ephemeral port and never clashes.

        Args:
            roles: Roles to be started together

        Raises:
            ConfigError: Two roles share a port
        """
        seen: Dict[int, str] = {}
        for role in roles:
            port = cls.get_listen_address(role)["port"]
            if port == 0:
                continue
            if port in seen:
                raise ConfigError(
                    f"Roles '{seen[port]}' and '{role}' are both configured on port {port}"
                )
            seen[port] = role

    @classmethod
    def get_data_dir(cls) -> str:
        """
        Get data directory path for persistence and keys

        Returns:
            Data directory path (created if missing)
        """
        path = Path(str(cls._get_config_value("data.dir", "data")))
        path.mkdir(parents=True, exist_ok=True)
        return str(path)

    @classmethod
    def get_log_level(cls) -> str:
        """
        Get log level

        Returns:
            Log level
        """
        return str(cls._get_config_value("logging.log_level", "INFO"))

    @classmethod
    def get_log_format(cls) -> str:
        """
        Get log format

        Returns:
            Log format string
        """
        return str(
            cls._get_config_value(
                "logging.log_format", "%(asctime)s %(levelname)s %(name)s: %(message)s"
            )
        )

    @classmethod
    def configure_logging(cls) -> None:
        """Configure the root logger from the logging section"""
        logging.basicConfig(level=cls.get_log_level().upper(), format=cls.get_log_format())

    @classmethod
    def validate_config(cls) -> Dict[str, Any]:
        """
        Validate configuration

        Returns:
            Configuration validation results (dict with bool values and optional error messages)
        """
        results: Dict[str, Any] = {}

        try:
            cls._load_config_file()
            results["config_file"] = True
        except (FileNotFoundError, ConfigError) as e:
            results["config_file"] = False
            results["config_file_error"] = str(e)
            return results

        try:
            cls.get_data_dir()
            results["data_dir"] = True
        except (KeyError, OSError):
            results["data_dir"] = False

        try:
            configured = [r for r in SERVICE_ROLES if cls._get_config_value(f"{r}.port", None)]
            cls.check_ports(configured)
            results["ports_distinct"] = True
        except ConfigError as e:
            results["ports_distinct"] = False
            results["ports_error"] = str(e)

        try:
            cls.get_aa_seed_type()
            results["aa_seed_type"] = True
        except (KeyError, ConfigError):
            results["aa_seed_type"] = False

        key_dir = Path(cls._get_config_value("data.dir", "data")) / "keys"
        results["aa_keys_present"] = key_dir.exists() and any(key_dir.glob("*.pem"))

        return results

    @classmethod
    def get_project_info(cls) -> Dict[str, str]:
        """
        Get project information

        Returns:
            Project information dictionary
        """
        return {
            "name": cls.PROJECT_NAME,
            "version": cls.PROJECT_VERSION,
            "description": cls.PROJECT_DESCRIPTION,
        }
