"""Tests for the YAML config loader."""

import logging

from clusterfit import config


def test_dot_keys_and_defaults():
    assert config.get("search.n_initial") == 3
    assert config.get("replay.thresholds") == [1.2, 1.1, 1.0]
    assert config.get("search.max_iterations", 99) == 99
    assert config.get("search.nope.deeper", "x") == "x"


def test_env_overrides(tmp_path, monkeypatch):
    path = tmp_path / "alt.yaml"
    path.write_text("replay:\n  seeds: 10\n  workers: 1\n", encoding="utf-8")
    monkeypatch.setenv("CLUSTERFIT_SEEDS", "25")
    monkeypatch.setenv("CLUSTERFIT_WORKERS", "4")
    monkeypatch.setenv("CLUSTERFIT_LOG_LEVEL", "debug")
    cfg = config.load_config(path)
    assert cfg["replay"] == {"seeds": 25, "workers": 4}
    assert cfg["logging"]["level"] == "DEBUG"


def test_validate_warns_without_failing(caplog):
    cfg = {
        "profiler": {"max_attempts": 0, "sample_count": "five"},
        "search": {"n_initial": 3, "min_observations": 6},
        "memory_model": {"r2_low": 0.9, "r2_high": 0.5},
    }
    with caplog.at_level(logging.WARNING, logger="clusterfit.config"):
        config.validate(cfg)
    text = caplog.text
    assert "profiler.max_attempts' should be > 0" in text
    assert "expected int but got str" in text
    assert "replay.seeds' is missing" in text
    assert "thresholds must satisfy" in text
