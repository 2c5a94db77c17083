import json

import pytest

from src.core.config import (
    CalibrationTable, SimConfig, build_config, default_out_dir, load_calibration, load_config, log_level,
)
from src.core.errors import ConfigError

from conftest import CONFIG_DIR


@pytest.mark.parametrize("name", ["small", "reference", "byzantine"])
def test_bundled_scenarios_validate(name):
    config = load_config(str(CONFIG_DIR / "scenarios" / f"{name}.json"))
    assert isinstance(config, SimConfig)
    assert config.name == name
    assert all(event.epoch <= config.epochs for event in config.script)


def test_seed_and_debug_overrides():
    config = load_config(str(CONFIG_DIR / "scenarios" / "small.json"), seed=99, debug_invariants=True)
    assert config.seed == 99
    assert config.debug_invariants


def test_error_names_the_field_path():
    with pytest.raises(ConfigError, match=r"grid\.n"):
        build_config({"grid": {"n": 0}})
    with pytest.raises(ConfigError, match=r"script\.0\.kind"):
        build_config({"script": [{"epoch": 1, "kind": "teleport"}]})


def test_cross_field_consistency():
    with pytest.raises(ConfigError, match="beyond"):
        build_config({"epochs": 1, "script": [{"epoch": 2, "kind": "join"}]})
    with pytest.raises(ConfigError, match="needs at least"):
        build_config({"pir": {"t": 3}, "population": {"dbs": 3}})
    with pytest.raises(ConfigError, match="Byzantine PIR"):
        build_config({"pir": {"t": 1}, "population": {"dbs": 3}, "byzantine": {"pir_servers": [1, 2]}})
    with pytest.raises(ConfigError, match="outside"):
        build_config({"grid": {"n": 4}, "population": {"groups": [{"center": [4, 0], "sus": 1}]}})
    with pytest.raises(ConfigError, match="pu_vacate"):
        build_config({"script": [{"epoch": 1, "kind": "pu_vacate", "cell": [0, 0]}]})


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_calibration_scaling():
    table = CalibrationTable()
    assert table.dkg(1000) == pytest.approx(1.05)
    assert table.dkg(500) == pytest.approx(0.525)
    assert table.reconstruct(250) == pytest.approx(0.2305)
    assert table.pir_query_gen(25, 1_000_000, 7) == pytest.approx(4.86)
    assert table.pir_process(25, 500_000, 560) == pytest.approx(1.33)


def test_calibration_file_and_env(tmp_path, monkeypatch):
    path = tmp_path / "calibration.json"
    path.write_text(json.dumps({"epid_sign_s": 0.5}))
    monkeypatch.setenv("TRUSTSAS_CALIBRATION", str(path))
    assert load_calibration().epid_sign_s == 0.5
    assert build_config({}).calibration.epid_sign_s == 0.5
    assert load_calibration(str(tmp_path / "missing.json")) == CalibrationTable()
    path.write_text(json.dumps({"epid_sign_s": "fast"}))
    with pytest.raises(ConfigError, match="epid_sign_s"):
        load_calibration(str(path))


def test_environment_settings(monkeypatch, tmp_path):
    monkeypatch.setenv("TRUSTSAS_OUT_DIR", str(tmp_path))
    monkeypatch.setenv("TRUSTSAS_LOG_LEVEL", "debug")
    assert default_out_dir() == tmp_path
    assert log_level() == 10
    monkeypatch.setenv("TRUSTSAS_LOG_LEVEL", "chatty")
    assert log_level() == 20
