"""
Client Wallet

Pseudonyms per AA, capabilities per (scope, kind), trans-redemption credits
and the spending strategy, persisted as YAML.

Spending strategies:

- unique_per_connection: every request presents a capability never shown before
- reuse_within_connection: one capability per connection, reused on that
  connection until the site reports it nullified
- cross_connection: one capability per scope shared by all connections until
  nullified (session-cookie behaviour)
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Set, Tuple

import yaml

from .exceptions import ConfigError
from .tokens import Capability, Pseudonym, TokenKind

logger = logging.getLogger(__name__)


class SpendingStrategy(str, Enum):
    UNIQUE_PER_CONNECTION = "unique_per_connection"
    REUSE_WITHIN_CONNECTION = "reuse_within_connection"
    CROSS_CONNECTION = "cross_connection"


def wallet_key(scope: bytes, kind: TokenKind) -> str:
    return kind.value + ":" + scope.rstrip(b"\x00").hex()


@dataclass
class _Slot:
    """Unspent capabilities of one (scope, kind) plus the ones in use"""

    fresh: List[Capability] = field(default_factory=list)
    in_use: Dict[str, Capability] = field(default_factory=dict)


class ClientWallet:
    """Single-writer token store of one client"""

    def __init__(
        self,
        strategy: SpendingStrategy = SpendingStrategy.UNIQUE_PER_CONNECTION,
        path: Optional[Path] = None,
    ) -> None:
        self.strategy = SpendingStrategy(strategy)
        self.path = path
        self.pseudonyms: Dict[str, Pseudonym] = {}
        self.slots: Dict[str, _Slot] = {}
        self.credits: Dict[str, Tuple[str, int]] = {}
        # digest -> connection ids a capability was shown on
        self.shown_on: Dict[bytes, Set[str]] = {}
        self._shown_epoch: Dict[bytes, bytes] = {}

    # Pseudonyms

    def add_pseudonym(self, aa_fingerprint: bytes, pseudonym: Pseudonym) -> None:
        self.pseudonyms[aa_fingerprint.hex()] = pseudonym

    def pseudonym_for(self, aa_fingerprint: bytes, now: float) -> Optional[Pseudonym]:
        """Live pseudonym for an AA; an expired one is pruned"""
        key = aa_fingerprint.hex()
        pseudonym = self.pseudonyms.get(key)
        if pseudonym is not None and pseudonym.is_expired(now):
            del self.pseudonyms[key]
            return None
        return pseudonym

    # Capabilities

    def add_capabilities(self, caps: List[Capability]) -> None:
        for cap in caps:
            slot = self.slots.setdefault(wallet_key(cap.payload.scope, cap.kind), _Slot())
            slot.fresh.append(cap)

    def count(self, scope: bytes, kind: TokenKind) -> int:
        slot = self.slots.get(wallet_key(scope, kind))
        return len(slot.fresh) if slot else 0

    def prune(self, now: float, epoch_value: Optional[bytes] = None) -> int:
        """
        Drop expired pseudonyms and capabilities of other epochs

        Returns:
            Number of dropped capabilities
        """
        for key in [k for k, p in self.pseudonyms.items() if p.is_expired(now)]:
            del self.pseudonyms[key]
        if epoch_value is None:
            return 0
        dropped = 0
        for slot in self.slots.values():
            before = len(slot.fresh) + len(slot.in_use)
            slot.fresh = [c for c in slot.fresh if c.payload.epoch_value == epoch_value]
            slot.in_use = {
                k: c for k, c in slot.in_use.items() if c.payload.epoch_value == epoch_value
            }
            dropped += before - len(slot.fresh) - len(slot.in_use)
        for digest in [d for d, e in self._shown_epoch.items() if e != epoch_value]:
            del self._shown_epoch[digest]
            self.shown_on.pop(digest, None)
        return dropped

    def take(
        self, scope: bytes, kind: TokenKind, connection_id: str = "default"
    ) -> Optional[Capability]:
        """
        Pick the capability to present on a connection

        Args:
            scope: Padded scope of the target site or relay
            kind: Token kind
            connection_id: Identifier of the connection the request goes out on

        Returns:
            Capability, or None when the wallet has nothing for this scope
        """
        slot = self.slots.get(wallet_key(scope, kind))
        if slot is None:
            return None
        if self.strategy == SpendingStrategy.REUSE_WITHIN_CONNECTION:
            cap = slot.in_use.get(connection_id)
            if cap is None and slot.fresh:
                cap = slot.in_use[connection_id] = slot.fresh.pop(0)
        elif self.strategy == SpendingStrategy.CROSS_CONNECTION:
            cap = slot.in_use.get("*")
            if cap is None and slot.fresh:
                cap = slot.in_use["*"] = slot.fresh.pop(0)
        else:
            cap = slot.fresh.pop(0) if slot.fresh else None
        if cap is not None:
            if cap.payload.scope != scope:
                raise ConfigError("Wallet slot holds a capability for another scope")
            digest = cap.digest()
            self.shown_on.setdefault(digest, set()).add(connection_id)
            self._shown_epoch[digest] = cap.payload.epoch_value
        return cap

    def mark_nullified(self, cap: Capability) -> None:
        """Forget a capability the site reported as nullified"""
        slot = self.slots.get(wallet_key(cap.payload.scope, cap.kind))
        if slot is None:
            return
        slot.in_use = {k: c for k, c in slot.in_use.items() if c != cap}

    # Trans-redemption credits (onion service side)

    def add_credit(self, aa_fingerprint: bytes, credit_id: str, remaining: int) -> None:
        self.credits[aa_fingerprint.hex()] = (credit_id, remaining)

    def credit_for(self, aa_fingerprint: bytes) -> Optional[str]:
        entry = self.credits.get(aa_fingerprint.hex())
        if entry is None or entry[1] <= 0:
            return None
        return entry[0]

    def use_credit(self, aa_fingerprint: bytes) -> None:
        key = aa_fingerprint.hex()
        credit_id, remaining = self.credits[key]
        if remaining <= 1:
            del self.credits[key]
        else:
            self.credits[key] = (credit_id, remaining - 1)

    # Persistence

    def to_dict(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy.value,
            "pseudonyms": {k: p.to_text() for k, p in self.pseudonyms.items()},
            "capabilities": {
                key: {
                    "fresh": [c.to_header() for c in slot.fresh],
                    "in_use": {conn: c.to_header() for conn, c in slot.in_use.items()},
                }
                for key, slot in self.slots.items()
                if slot.fresh or slot.in_use
            },
            "credits": {k: {"id": c, "remaining": n} for k, (c, n) in self.credits.items()},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], path: Optional[Path] = None) -> "ClientWallet":
        wallet = cls(SpendingStrategy(data.get("strategy", "unique_per_connection")), path)
        for key, text in (data.get("pseudonyms") or {}).items():
            wallet.pseudonyms[key] = Pseudonym.from_text(text)
        for key, entry in (data.get("capabilities") or {}).items():
            wallet.slots[key] = _Slot(
                fresh=[Capability.from_header(h) for h in entry.get("fresh", [])],
                in_use={
                    conn: Capability.from_header(h)
                    for conn, h in (entry.get("in_use") or {}).items()
                },
            )
        for key, entry in (data.get("credits") or {}).items():
            wallet.credits[key] = (str(entry["id"]), int(entry["remaining"]))
        return wallet

    def save(self, path: Optional[Path] = None) -> None:
        target = Path(path or self.path or "wallet.yml")
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)

    @classmethod
    def load(
        cls, path: Path, strategy: Optional[SpendingStrategy] = None
    ) -> "ClientWallet":
        """
        Load a wallet file, or start an empty wallet if it does not exist

        Raises:
            ConfigError: The file is not valid YAML
        """
        path = Path(path)
        if not path.exists():
            return cls(strategy or SpendingStrategy.UNIQUE_PER_CONNECTION, path)
        try:
            with open(path, encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(
                f"Wallet file is not valid YAML: {e}",
                path=str(path),
                line=mark.line + 1 if mark else None,
            ) from e
        wallet = cls.from_dict(data, path)
        if strategy is not None:
            wallet.strategy = SpendingStrategy(strategy)
        return wallet
