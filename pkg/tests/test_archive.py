from __future__ import annotations

from pathlib import Path

import arrow
import pytest

from nlslab.archive import RunArchive, config_hash


def test_config_hash_ignores_key_order() -> None:
    first = config_hash({"a": [0.0], "lambda": [0.5], "grid": {"n": 800, "r_max": 20.0}})
    second = config_hash({"grid": {"r_max": 20.0, "n": 800}, "lambda": [0.5], "a": [0.0]})
    assert first == second
    assert len(first) == 16


def test_config_hash_sees_values() -> None:
    assert config_hash({"dt": 1e-3}) != config_hash({"dt": 2e-3})


def test_default_path_follows_environment(tmp_path: Path) -> None:
    assert RunArchive._resolve_path(None, "default") == tmp_path / "runs.db"


def test_default_path_per_profile(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.delenv("NLSLAB_ARCHIVE_FILE")
    monkeypatch.setenv("HOME", str(tmp_path))
    path = RunArchive._resolve_path(None, "../cluster")
    assert path == tmp_path / ".cache" / "nlslab" / "cluster" / "runs.db"


@pytest.mark.asyncio
async def test_ground_states_are_keyed_by_grid(tmp_path: Path) -> None:
    archive = await RunArchive.create(tmp_path / "runs.db")
    try:
        await archive.store_ground_state(0.0, "general", "30x6000", {"C": 0.0406})
        await archive.store_ground_state(0.0, "general", "20x800", {"C": 0.0409})
        stored = await archive.ground_state(0.0, "general", "30x6000")
        assert stored is not None
        assert stored.record == {"C": 0.0406}
        assert await archive.ground_state(0.0, "radial", "30x6000") is None
    finally:
        await archive.close()


@pytest.mark.asyncio
async def test_cells_replace_and_sort(tmp_path: Path) -> None:
    archive = await RunArchive.create(tmp_path / "runs.db")
    try:
        before = arrow.utcnow().shift(seconds=-1)
        await archive.store_cell(0.0, 1.5, "key", {"observed": "undecided"})
        await archive.store_cell(-0.1, 0.5, "key", {"observed": "scattered"})
        await archive.store_cell(0.0, 1.5, "key", {"observed": "blew_up"})
        await archive.store_cell(0.0, 1.5, "other", {"observed": "blew_up"})
        cells = await archive.cells("key")
        assert [(cell.a, cell.lam) for cell in cells] == [(-0.1, 0.5), (0.0, 1.5)]
        assert cells[1].row == {"observed": "blew_up"}
        assert cells[1].created_at >= before
        assert len(await archive.cells_since(before)) == 3
        assert await archive.cells_since(arrow.utcnow().shift(hours=1)) == []
    finally:
        await archive.close()


@pytest.mark.asyncio
async def test_archive_survives_reopen(tmp_path: Path) -> None:
    path = tmp_path / "runs.db"
    archive = await RunArchive.create(path)
    await archive.store_cell(0.0, 0.5, "key", {"agreement": True})
    await archive.close()
    reopened = await RunArchive.create(path)
    try:
        cells = await reopened.cells("key")
        assert cells[0].row == {"agreement": True}
    finally:
        await reopened.close()
