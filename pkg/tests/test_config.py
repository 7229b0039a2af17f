from __future__ import annotations

import json
from pathlib import Path

import pytest

from nlslab.config import (
    LabConfig,
    config_file_path,
    load_config,
    load_config_from_path,
    load_sweep_config,
    write_config_file,
)
from nlslab.errors import ConfigError


CONFIG = LabConfig(profile="test")


def test_config_file_path_uses_profile(tmp_path: Path) -> None:
    target = config_file_path("stage", config_home=tmp_path)
    assert target == tmp_path / "config.stage.toml"


def test_write_config_file_persists_values(tmp_path: Path) -> None:
    target = tmp_path / "config.local.toml"
    CONFIG.evolve.scatter_window = (5.0, 10.0)
    try:
        result = write_config_file(target, CONFIG)
    finally:
        CONFIG.evolve.scatter_window = None
    assert result == target
    text = target.read_text()
    assert text.startswith("[grid]")
    assert "r_max = 30.0" in text
    assert "n = 6000" in text
    assert "scatter_window = [5.0, 10.0]" in text
    assert "threshold_tol = 0.001" in text


def test_write_config_file_skips_unset_values(tmp_path: Path) -> None:
    target = write_config_file(tmp_path / "config.toml", CONFIG)
    assert "scatter_window" not in target.read_text()


def test_write_config_file_requires_force(tmp_path: Path) -> None:
    target = tmp_path / "config.local.toml"
    write_config_file(target, CONFIG)
    with pytest.raises(FileExistsError):
        write_config_file(target, CONFIG)
    # force overwrites
    write_config_file(target, CONFIG, force=True)


def test_load_config_reads_written_file(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("NLSLAB_CONFIG_FILE")
    target = config_file_path("app", config_home=tmp_path)
    written = LabConfig(profile="app")
    written.grid.n = 1200
    written.evolve.dt = 5e-4
    write_config_file(target, written)
    loaded = load_config("app", config_home=tmp_path)
    assert loaded.profile == "app"
    assert loaded.grid.n == 1200
    assert loaded.evolve.dt == 5e-4


def test_missing_file_gives_defaults() -> None:
    loaded = load_config()
    assert loaded.profile == "default"
    assert loaded.grid.r_max == 30.0
    assert loaded.evolve.blowup_factor == 100.0


def test_profile_from_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("NLSLAB_PROFILE", "cluster")
    assert load_config().profile == "cluster"


def test_environment_overrides_defaults(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("NLSLAB_N", "800")
    monkeypatch.setenv("NLSLAB_DT", "2e-3")
    loaded = load_config()
    assert loaded.grid.n == 800
    assert loaded.evolve.dt == 2e-3


def test_file_overrides_environment(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    path = tmp_path / "lab.toml"
    path.write_text("[grid]\nn = 900\n")
    monkeypatch.setenv("NLSLAB_N", "800")
    assert load_config_from_path(path).grid.n == 900


def test_window_accepts_comma_string(tmp_path: Path) -> None:
    path = tmp_path / "lab.toml"
    path.write_text('[evolve]\nt_final = 4.0\nscatter_window = "2, 4"\n')
    assert load_config_from_path(path).evolve.build().scatter_window == (2.0, 4.0)


@pytest.mark.parametrize(
    ("body", "key_path"),
    [
        ("[grid]\nn = \"many\"\n", "grid.n"),
        ("[grid]\nwidth = 3\n", "grid.width"),
        ("[plot]\ncolor = 1\n", "plot"),
        ("[evolve]\nscatter_window = [1.0]\n", "evolve.scatter_window"),
    ],
)
def test_bad_settings_name_their_key(tmp_path: Path, body: str, key_path: str) -> None:
    path = tmp_path / "lab.toml"
    path.write_text(body)
    with pytest.raises(ConfigError) as info:
        load_config_from_path(path)
    assert info.value.key_path == key_path


def test_invalid_values_are_config_errors(tmp_path: Path) -> None:
    path = tmp_path / "lab.toml"
    path.write_text("[evolve]\ndt = -1.0\n")
    with pytest.raises(ConfigError, match="dt must be positive"):
        load_config_from_path(path)


def test_invalid_toml(tmp_path: Path) -> None:
    path = tmp_path / "lab.toml"
    path.write_text("[grid\n")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config_from_path(path)


def test_missing_explicit_file(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_config_from_path(tmp_path / "absent.toml")


class TestSweepConfig:
    def write(self, tmp_path: Path, payload: dict) -> Path:
        path = tmp_path / "sweep.json"
        path.write_text(json.dumps(payload))
        return path

    def test_minimal(self, tmp_path: Path) -> None:
        config = load_sweep_config(self.write(tmp_path, {"a": [0.0, -0.1], "lambda": [0.5, 1.5]}))
        assert config.a == [0.0, -0.1]
        assert config.lam == [0.5, 1.5]
        assert config.grid.n == 6000
        assert config.evolve.build().dt == 1e-3
        assert not config.archive

    def test_dump_uses_the_file_keys(self, tmp_path: Path) -> None:
        config = load_sweep_config(self.write(tmp_path, {"a": [0.0], "lambda": [0.5]}))
        payload = config.model_dump(by_alias=True)
        assert payload["lambda"] == [0.5]
        assert "lam" not in payload

    def test_unknown_key_is_named(self, tmp_path: Path) -> None:
        path = self.write(tmp_path, {"a": [0.0], "lambda": [0.5], "evolve": {"dtt": 0.1}})
        with pytest.raises(ConfigError) as info:
            load_sweep_config(path)
        assert info.value.key_path == "evolve.dtt"

    def test_coupling_below_hardy_edge(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="-1/4") as info:
            load_sweep_config(self.write(tmp_path, {"a": [-0.3], "lambda": [0.5]}))
        assert info.value.key_path == "a"

    def test_window_outside_run(self, tmp_path: Path) -> None:
        payload = {"a": [0.0], "lambda": [0.5], "evolve": {"t_final": 1.0, "scatter_window": [0.5, 2.0]}}
        with pytest.raises(ConfigError, match="scatter_window"):
            load_sweep_config(self.write(tmp_path, payload))

    def test_empty_lists_are_allowed(self, tmp_path: Path) -> None:
        assert load_sweep_config(self.write(tmp_path, {"a": [0.0], "lambda": []})).lam == []

    def test_invalid_json(self, tmp_path: Path) -> None:
        path = tmp_path / "sweep.json"
        path.write_text("{\n  \"a\": [0.0,\n")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_sweep_config(path)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="not found"):
            load_sweep_config(tmp_path / "absent.json")
