import json

import pytest

from guiagent.config import RuntimeConfig
from guiagent.gateway import HttpBackend, ScriptedBackend
from guiagent import fixtures


def test_defaults():
    cfg = RuntimeConfig()
    assert cfg.max_steps == 30
    assert cfg.keep_zero_fraction == 0.25
    assert cfg.reflection_window == 3
    assert cfg.resume_budget == 2
    assert cfg.max_asks_per_run == 3
    assert cfg.rollout_temperature == 1.0


def test_load_from_file_and_env(tmp_path, monkeypatch):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "gateway_url": "http://file-host/v1",
        "gateway_model": "file-model",
        "max_steps": 12,
        "f1_threshold": 0.6,
    }))
    monkeypatch.setenv("GUIAGENT_GATEWAY_URL", "http://env-host/v1")
    monkeypatch.setenv("GUIAGENT_MAX_STEPS", "7")
    monkeypatch.setenv("GUIAGENT_GATEWAY_RETRIES", "5")
    cfg = RuntimeConfig.load(path)
    assert cfg.gateway_url == "http://env-host/v1"  # env wins over file
    assert cfg.gateway_model == "file-model"
    assert cfg.max_steps == 7
    assert cfg.gateway_retries == 5
    assert cfg.f1_threshold == 0.6


def test_env_config_path(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"max_steps": 4}))
    monkeypatch.setenv("GUIAGENT_CONFIG", str(path))
    assert RuntimeConfig.load().max_steps == 4


def test_build_backend_prefers_script(tmp_path):
    cfg = RuntimeConfig(gateway_url="http://host/v1")
    backend = cfg.build_backend(script_path=str(fixtures.fixture_path("bench_scripts")))
    assert isinstance(backend, ScriptedBackend)
    live = cfg.build_backend()
    assert isinstance(live, HttpBackend)
    assert live.config.url == "http://host/v1"


def test_build_backend_requires_something():
    with pytest.raises(ValueError):
        RuntimeConfig().build_backend()
