"""
Unit tests for run configuration loading.
"""

import json
from pathlib import Path

import pytest

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from shared.config import EventSchema, load_run_config, read_config_file
from shared.errors import ConfigError, InputFileError
from shared.models import SensitivityMode, TemperatureUnit


def test_defaults():
    cfg = load_run_config()
    assert cfg.scheme_weight == 0.5
    assert cfg.outlier_threshold == 2.0
    assert cfg.temperature_unit == TemperatureUnit.FAHRENHEIT
    assert cfg.effective_baseline_unit == TemperatureUnit.FAHRENHEIT
    assert cfg.sensitivity_mode == SensitivityMode.MEAN_OF_MONTHLY
    assert cfg.output_formats == ["json", "csv"]
    assert cfg.n_replicates == 30
    assert cfg.window is None


def test_toml_file_paths_are_relative_to_file(tmp_path):
    """Test that relative paths resolve against the config file's directory."""
    path = tmp_path / "conf" / "run.toml"
    path.parent.mkdir()
    path.write_text(
        'events_file = "data/events.csv"\n'
        'output_dir = "/abs/out"\n'
        'baseline_unit = "C"\n'
        "[window]\n"
        "start = 1996\n"
        "end = 2013\n"
        "exclude_years = [2001]\n"
    )
    cfg = load_run_config(path)
    assert cfg.events_file == tmp_path / "conf" / "data" / "events.csv"
    assert cfg.output_dir == Path("/abs/out")
    assert cfg.effective_baseline_unit == TemperatureUnit.CELSIUS
    assert cfg.window.start == 1996
    assert 2001 not in cfg.window.years()


def test_json_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"scheme_weight": 0.25, "event_schema": {"date_column": "BEGIN_DATE"}}))
    cfg = load_run_config(path)
    assert cfg.scheme_weight == 0.25
    assert cfg.event_schema.date_column == "BEGIN_DATE"
    assert cfg.event_schema.cost_column == "DAMAGE"


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("scheme_weight = 0.25\nhorizon_years = 20\n")
    cfg = load_run_config(path, scheme_weight=0.75, horizon_years=None)
    assert cfg.scheme_weight == 0.75
    assert cfg.horizon_years == 20


def test_environment_is_ignored(monkeypatch):
    """Test that environment variables never change a run."""
    monkeypatch.setenv("SCHEME_WEIGHT", "0.9")
    monkeypatch.setenv("scheme_weight", "0.9")
    assert load_run_config().scheme_weight == 0.5


def test_invalid_weight():
    with pytest.raises(ConfigError) as exc_info:
        load_run_config(scheme_weight=1.5)
    assert any("scheme_weight" in m for m in exc_info.value.details["errors"])


def test_unknown_key(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("schema_weight = 0.5\n")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_unknown_output_format():
    with pytest.raises(ConfigError):
        load_run_config(output_formats=["json", "xml"])


def test_window_out_of_order():
    with pytest.raises(ConfigError):
        load_run_config(window={"start": 2010, "end": 2000})


def test_unsupported_extension(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("scheme_weight: 0.5\n")
    with pytest.raises(ConfigError):
        read_config_file(path)


def test_missing_file(tmp_path):
    with pytest.raises(InputFileError) as exc_info:
        load_run_config(tmp_path / "missing.toml")
    assert exc_info.value.exit_code == 2


def test_check_paths(tmp_path):
    """Test that unset and missing paths are both reported."""
    present = tmp_path / "events.csv"
    present.write_text("DATE,DAMAGE\n")
    cfg = load_run_config(events_file=present, temperatures_file=tmp_path / "missing.csv")
    cfg.check_paths("events_file")

    with pytest.raises(InputFileError) as exc_info:
        cfg.check_paths("events_file", "temperatures_file")
    assert exc_info.value.details["field"] == "temperatures_file"

    with pytest.raises(InputFileError, match="not configured"):
        cfg.check_paths("baseline_file")


def test_suffixes_are_uppercased():
    schema = EventSchema(suffixes={"k": 1000.0, "m": 1e6})
    assert schema.suffixes == {"K": 1000.0, "M": 1e6}


def test_suffixes_rejected():
    with pytest.raises(ValueError):
        EventSchema(suffixes={"K": -1.0})
    with pytest.raises(ValueError):
        EventSchema(suffixes={"KB": 1000.0})
