"""
AA State Store

This module provides SQLite-based persistence for the access authority:
seed records with their bucket levels, pseudonym bindings, the spent
trans-capability set, trans-redemption credits and spent puzzle stubs.
Every mutation commits before returning, so a restarted AA resumes with the
same bucket levels and spent sets.
"""

import json
import sqlite3
import time
from contextlib import closing, contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

from .exceptions import StoreError


class StateStore:
    """Durable AA state"""

    def __init__(self, db_path: str = "data/aa_state.db") -> None:
        """
        Initialize state store

        Args:
            db_path: SQLite database file path
        """
        self.db_path = Path(db_path)

        # Ensure data directory exists
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

        self._init_database()

    @contextmanager
    def _connect(self) -> Iterator[sqlite3.Connection]:
        """Connection that commits on success and is closed on exit"""
        with closing(sqlite3.connect(self.db_path, timeout=30)) as conn:
            with conn:
                yield conn

    def _init_database(self) -> None:
        """Initialize database tables"""
        try:
            with self._connect() as conn:
                conn.execute(
                    """
                    CREATE TABLE IF NOT EXISTS seeds (
                        seed_id TEXT PRIMARY KEY,
                        seed_type TEXT NOT NULL,
                        site_bucket TEXT NOT NULL,
                        relay_bucket TEXT NOT NULL,
                        created_at REAL NOT NULL
                    )
                """
                )
                conn.execute(
                    """
                    CREATE TABLE IF NOT EXISTS pseudonyms (
                        binding_key TEXT PRIMARY KEY,
                        seed_id TEXT NOT NULL,
                        expires_at REAL NOT NULL
                    )
                """
                )
                conn.execute(
                    """
                    CREATE TABLE IF NOT EXISTS spent_trans (
                        digest TEXT PRIMARY KEY,
                        epoch INTEGER NOT NULL
                    )
                """
                )
                conn.execute(
                    """
                    CREATE TABLE IF NOT EXISTS trans_credits (
                        credit_id TEXT PRIMARY KEY,
                        remaining INTEGER NOT NULL,
                        epoch INTEGER NOT NULL
                    )
                """
                )
                conn.execute(
                    """
                    CREATE TABLE IF NOT EXISTS spent_stubs (
                        digest TEXT PRIMARY KEY,
                        period INTEGER NOT NULL
                    )
                """
                )
                conn.execute(
                    """
                    CREATE TABLE IF NOT EXISTS meta (
                        key TEXT PRIMARY KEY,
                        value TEXT NOT NULL
                    )
                """
                )
                conn.execute(
                    "CREATE INDEX IF NOT EXISTS idx_pseudonyms_expires ON pseudonyms(expires_at)"
                )
        except sqlite3.Error as e:
            raise StoreError(f"Failed to initialize state database: {e}", "init")

    # Seed records

    def get_seed(self, seed_id: str) -> Optional[Dict[str, Any]]:
        """
        Get a seed record

        Args:
            seed_id: Hex seed digest

        Returns:
            Dictionary with seed_type, site_bucket, relay_bucket, created_at, or None
        """
        try:
            with self._connect() as conn:
                row = conn.execute(
                    "SELECT seed_type, site_bucket, relay_bucket, created_at "
                    "FROM seeds WHERE seed_id = ?",
                    (seed_id,),
                ).fetchone()
        except sqlite3.Error as e:
            raise StoreError(f"Failed to read seed record: {e}", "get_seed", seed_id)

        if row is None:
            return None
        seed_type, site_bucket, relay_bucket, created_at = row
        return {
            "seed_id": seed_id,
            "seed_type": seed_type,
            "site_bucket": json.loads(site_bucket),
            "relay_bucket": json.loads(relay_bucket),
            "created_at": created_at,
        }

    def put_seed(
        self,
        seed_id: str,
        seed_type: str,
        site_bucket: Dict[str, float],
        relay_bucket: Dict[str, float],
        created_at: float,
    ) -> None:
        """
        Store or replace a seed record

        Raises:
            StoreError: Write failed
        """
        try:
            with self._connect() as conn:
                conn.execute(
                    """
                    INSERT OR REPLACE INTO seeds
                        (seed_id, seed_type, site_bucket, relay_bucket, created_at)
                    VALUES (?, ?, ?, ?, ?)
                """,
                    (
                        seed_id,
                        seed_type,
                        json.dumps(site_bucket),
                        json.dumps(relay_bucket),
                        created_at,
                    ),
                )
        except sqlite3.Error as e:
            raise StoreError(f"Failed to write seed record: {e}", "put_seed", seed_id)

    # Pseudonym bindings

    def bind_pseudonym(self, binding_key: str, seed_id: str, expires_at: float) -> None:
        try:
            with self._connect() as conn:
                conn.execute(
                    "INSERT OR REPLACE INTO pseudonyms (binding_key, seed_id, expires_at) "
                    "VALUES (?, ?, ?)",
                    (binding_key, seed_id, expires_at),
                )
        except sqlite3.Error as e:
            raise StoreError(
                f"Failed to bind pseudonym: {e}", "bind_pseudonym", binding_key
            )

    def seed_for_pseudonym(self, binding_key: str, now: float) -> Optional[str]:
        """
        Resolve a pseudonym binding

        Returns:
            seed_id, or None if unknown or expired
        """
        try:
            with self._connect() as conn:
                row = conn.execute(
                    "SELECT seed_id, expires_at FROM pseudonyms WHERE binding_key = ?",
                    (binding_key,),
                ).fetchone()
        except sqlite3.Error as e:
            raise StoreError(
                f"Failed to read pseudonym binding: {e}", "seed_for_pseudonym", binding_key
            )
        if row is None or now >= row[1]:
            return None
        return str(row[0])

    # Trans-capabilities

    def mark_trans_spent(self, digest: str, epoch: int) -> bool:
        """
        Insert a trans-capability digest unless already present

        Check and insert happen in one statement.

        Returns:
            True if the digest was newly inserted
        """
        try:
            with self._connect() as conn:
                cursor = conn.execute(
                    "INSERT OR IGNORE INTO spent_trans (digest, epoch) VALUES (?, ?)",
                    (digest, epoch),
                )
                return cursor.rowcount == 1
        except sqlite3.Error as e:
            raise StoreError(f"Failed to record spent trans: {e}", "mark_trans_spent", digest)

    def is_trans_spent(self, digest: str) -> bool:
        try:
            with self._connect() as conn:
                row = conn.execute(
                    "SELECT 1 FROM spent_trans WHERE digest = ?", (digest,)
                ).fetchone()
                return row is not None
        except sqlite3.Error as e:
            raise StoreError(f"Failed to read spent trans: {e}", "is_trans_spent", digest)

    def put_credit(self, credit_id: str, remaining: int, epoch: int) -> None:
        try:
            with self._connect() as conn:
                conn.execute(
                    "INSERT OR REPLACE INTO trans_credits (credit_id, remaining, epoch) "
                    "VALUES (?, ?, ?)",
                    (credit_id, remaining, epoch),
                )
        except sqlite3.Error as e:
            raise StoreError(f"Failed to store credit: {e}", "put_credit", credit_id)

    def take_credit(self, credit_id: str, epoch: int) -> Optional[int]:
        """
        Spend one unit of a redemption credit

        Returns:
            Units left after this one, or None if the credit is unknown or used up
        """
        try:
            with self._connect() as conn:
                cursor = conn.execute(
                    "UPDATE trans_credits SET remaining = remaining - 1 "
                    "WHERE credit_id = ? AND epoch = ? AND remaining > 0",
                    (credit_id, epoch),
                )
                if cursor.rowcount != 1:
                    return None
                row = conn.execute(
                    "SELECT remaining FROM trans_credits WHERE credit_id = ?", (credit_id,)
                ).fetchone()
                return int(row[0])
        except sqlite3.Error as e:
            raise StoreError(f"Failed to spend credit: {e}", "take_credit", credit_id)

    # Puzzle stubs

    def mark_stub_spent(self, digest: str, period: int) -> bool:
        """
        Insert a puzzle stub digest unless already present

        Returns:
            True if the digest was newly inserted
        """
        try:
            with self._connect() as conn:
                cursor = conn.execute(
                    "INSERT OR IGNORE INTO spent_stubs (digest, period) VALUES (?, ?)",
                    (digest, period),
                )
                return cursor.rowcount == 1
        except sqlite3.Error as e:
            raise StoreError(f"Failed to record spent stub: {e}", "mark_stub_spent", digest)

    def purge_stubs(self, before_period: int) -> int:
        try:
            with self._connect() as conn:
                cursor = conn.execute(
                    "DELETE FROM spent_stubs WHERE period < ?", (before_period,)
                )
                return cursor.rowcount
        except sqlite3.Error as e:
            raise StoreError(f"Failed to purge spent stubs: {e}", "purge_stubs")

    # Epoch rotation

    def purge_epoch(self, current_epoch: int, now: Optional[float] = None) -> int:
        """
        Drop epoch-scoped rows from earlier epochs and expired pseudonym bindings

        Args:
            current_epoch: Index of the epoch now in force
            now: Clock value for pseudonym expiry

        Returns:
            Number of deleted rows
        """
        now = time.time() if now is None else now
        try:
            with self._connect() as conn:
                deleted = conn.execute(
                    "DELETE FROM spent_trans WHERE epoch < ?", (current_epoch,)
                ).rowcount
                deleted += conn.execute(
                    "DELETE FROM trans_credits WHERE epoch < ?", (current_epoch,)
                ).rowcount
                deleted += conn.execute(
                    "DELETE FROM pseudonyms WHERE expires_at <= ?", (now,)
                ).rowcount
                return deleted
        except sqlite3.Error as e:
            raise StoreError(f"Failed to purge epoch state: {e}", "purge_epoch")

    # Metadata

    def get_meta(self, key: str) -> Optional[str]:
        try:
            with self._connect() as conn:
                row = conn.execute("SELECT value FROM meta WHERE key = ?", (key,)).fetchone()
                return None if row is None else str(row[0])
        except sqlite3.Error as e:
            raise StoreError(f"Failed to read metadata: {e}", "get_meta", key)

    def set_meta(self, key: str, value: str) -> None:
        try:
            with self._connect() as conn:
                conn.execute(
                    "INSERT OR REPLACE INTO meta (key, value) VALUES (?, ?)", (key, value)
                )
        except sqlite3.Error as e:
            raise StoreError(f"Failed to write metadata: {e}", "set_meta", key)

    def get_stats(self) -> Dict[str, Any]:
        """
        Get store statistics

        Returns:
            Dictionary containing row counts per table
        """
        try:
            with self._connect() as conn:
                stats: Dict[str, Any] = {"db_path": str(self.db_path)}
                for table in ("seeds", "pseudonyms", "spent_trans", "trans_credits", "spent_stubs"):
                    stats[table] = conn.execute(f"SELECT COUNT(*) FROM {table}").fetchone()[0]
                return stats
        except sqlite3.Error as e:
            raise StoreError(f"Failed to get store stats: {e}", "stats")
