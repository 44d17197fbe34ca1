"""Bundled scenarios and golden backend scripts used by tests, demos, the
bench command, and the default scenario registry."""

from __future__ import annotations

import json
from pathlib import Path

from ..gateway import BackendScript, ScriptedBackend
from ..simenv import Scenario, load_scenario

_ROOT = Path(__file__).parent

SCENARIOS = ("shopping", "expenses", "settings", "loop", "burger", "phone", "bench")


def fixture_path(name: str) -> Path:
    path = _ROOT / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled fixture {name!r}")
    return path


def scenario(name: str) -> Scenario:
    return load_scenario(fixture_path(name))


def script(name: str) -> BackendScript:
    return BackendScript.from_file(fixture_path(name))


def scripted_backend(name: str) -> ScriptedBackend:
    return ScriptedBackend(script(name))


def scenario_names() -> list[str]:
    return [p.stem for p in sorted(_ROOT.glob("*.json")) if not p.stem.endswith("_scripts")]


def raw(name: str) -> dict:
    return json.loads(fixture_path(name).read_text(encoding="utf-8"))
