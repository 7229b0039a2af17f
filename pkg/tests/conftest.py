from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest


root = Path(__file__).resolve().parent.parent
src = root / "src"
if str(src) not in sys.path:
    sys.path.insert(0, str(src))

from nlslab.models import RadialField, RadialGrid  # noqa: E402


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("NLSLAB_CONFIG_FILE", str(tmp_path / "no-config.toml"))
    monkeypatch.setenv("NLSLAB_ARCHIVE_FILE", str(tmp_path / "runs.db"))
    for name in ("NLSLAB_PROFILE", "NLSLAB_RMAX", "NLSLAB_N", "NLSLAB_TOL", "NLSLAB_DT", "NLSLAB_TFINAL"):
        monkeypatch.delenv(name, raising=False)


def gaussian(grid: RadialGrid, amplitude: float = 1.0, width: float = 1.0, chirp: float = 0.0) -> RadialField:
    r = grid.r
    return RadialField(grid, amplitude * np.exp(-((r / width) ** 2) + 1j * chirp * r**2))
