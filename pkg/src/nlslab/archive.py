from __future__ import annotations

import asyncio
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import aiosqlite
import arrow


__all__ = ["ArchivedCell", "ArchivedGroundState", "RunArchive", "config_hash"]


def config_hash(config: Mapping[str, Any]) -> str:
    """Stable short digest of a resolved configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


@dataclass
class ArchivedGroundState:
    a: float
    flavor: str
    grid_key: str
    record: dict[str, Any]
    created_at: arrow.Arrow


@dataclass
class ArchivedCell:
    a: float
    lam: float
    config_key: str
    row: dict[str, Any]
    created_at: arrow.Arrow


class RunArchive:
    """SQLite record of ground states and sweep cells, keyed by (a, λ, config hash)."""

    def __init__(self, path: Path | None = None, *, profile: str = "default"):
        resolved = self._resolve_path(path, profile)
        resolved.parent.mkdir(parents=True, exist_ok=True)
        self.path = resolved
        self._conn: aiosqlite.Connection | None = None
        self._write_lock = asyncio.Lock()

    @classmethod
    async def create(cls, path: Path | None = None, *, profile: str = "default") -> RunArchive:
        instance = cls(path, profile=profile)
        await instance._connect()
        return instance

    async def _connect(self) -> None:
        self._conn = await aiosqlite.connect(str(self.path))
        self._conn.row_factory = aiosqlite.Row
        await self._ensure_schema()

    async def close(self) -> None:
        if self._conn:
            await self._conn.close()
            self._conn = None

    @staticmethod
    def _resolve_path(path: Path | None, profile: str) -> Path:
        if path:
            return path.expanduser()
        override = os.environ.get("NLSLAB_ARCHIVE_FILE")
        if override:
            return Path(override).expanduser()
        try:
            base = Path.home()
        except OSError:
            base = Path.cwd()
        safe_profile = Path((profile or "").strip()).name or "default"
        return base / ".cache" / "nlslab" / safe_profile / "runs.db"

    async def _ensure_schema(self) -> None:
        script = """
        CREATE TABLE IF NOT EXISTS ground_states (
            a REAL NOT NULL,
            flavor TEXT NOT NULL,
            grid_key TEXT NOT NULL,
            record TEXT NOT NULL,
            created_at TEXT NOT NULL,
            PRIMARY KEY (a, flavor, grid_key)
        );

        CREATE TABLE IF NOT EXISTS sweep_cells (
            a REAL NOT NULL,
            lam REAL NOT NULL,
            config_key TEXT NOT NULL,
            row TEXT NOT NULL,
            created_at TEXT NOT NULL,
            PRIMARY KEY (a, lam, config_key)
        );
        CREATE INDEX IF NOT EXISTS idx_sweep_cells_config ON sweep_cells(config_key);
        """
        assert self._conn is not None
        await self._conn.executescript(script)
        await self._conn.commit()

    async def store_ground_state(
        self, a: float, flavor: str, grid_key: str, record: Mapping[str, Any]
    ) -> None:
        assert self._conn is not None
        async with self._write_lock:
            await self._conn.execute(
                """
                INSERT OR REPLACE INTO ground_states (a, flavor, grid_key, record, created_at)
                VALUES (?, ?, ?, ?, ?)
                """,
                (a, flavor, grid_key, json.dumps(record, sort_keys=True), arrow.utcnow().isoformat()),
            )
            await self._conn.commit()

    async def ground_state(self, a: float, flavor: str, grid_key: str) -> ArchivedGroundState | None:
        assert self._conn is not None
        cursor = await self._conn.execute(
            "SELECT * FROM ground_states WHERE a = ? AND flavor = ? AND grid_key = ?",
            (a, flavor, grid_key),
        )
        row = await cursor.fetchone()
        if row is None:
            return None
        return ArchivedGroundState(
            a=row["a"],
            flavor=row["flavor"],
            grid_key=row["grid_key"],
            record=json.loads(row["record"]),
            created_at=arrow.get(row["created_at"]),
        )

    async def store_cell(self, a: float, lam: float, config_key: str, row: Mapping[str, Any]) -> None:
        assert self._conn is not None
        async with self._write_lock:
            await self._conn.execute(
                """
                INSERT OR REPLACE INTO sweep_cells (a, lam, config_key, row, created_at)
                VALUES (?, ?, ?, ?, ?)
                """,
                (a, lam, config_key, json.dumps(row, sort_keys=True), arrow.utcnow().isoformat()),
            )
            await self._conn.commit()

    async def cells(self, config_key: str) -> list[ArchivedCell]:
        assert self._conn is not None
        cursor = await self._conn.execute(
            "SELECT * FROM sweep_cells WHERE config_key = ? ORDER BY a, lam",
            (config_key,),
        )
        rows = await cursor.fetchall()
        return [
            ArchivedCell(
                a=row["a"],
                lam=row["lam"],
                config_key=row["config_key"],
                row=json.loads(row["row"]),
                created_at=arrow.get(row["created_at"]),
            )
            for row in rows
        ]

    async def cells_since(self, since: arrow.Arrow) -> list[ArchivedCell]:
        assert self._conn is not None
        cursor = await self._conn.execute("SELECT * FROM sweep_cells ORDER BY created_at")
        rows = await cursor.fetchall()
        cells = [
            ArchivedCell(
                a=row["a"],
                lam=row["lam"],
                config_key=row["config_key"],
                row=json.loads(row["row"]),
                created_at=arrow.get(row["created_at"]),
            )
            for row in rows
        ]
        return [cell for cell in cells if cell.created_at >= since]
