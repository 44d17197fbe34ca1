from __future__ import annotations

import pytest

from guiagent import fixtures
from guiagent.simenv import SimEnv


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE {name}: {'PASS' if report.passed else 'FAIL'}")


@pytest.fixture
def shopping_scenario():
    return fixtures.scenario("shopping")


@pytest.fixture
def settings_scenario():
    return fixtures.scenario("settings")


@pytest.fixture
def burger_scenario():
    return fixtures.scenario("burger")


@pytest.fixture
def phone_scenario():
    return fixtures.scenario("phone")


@pytest.fixture
def loop_scenario():
    return fixtures.scenario("loop")


@pytest.fixture
def bench_scenario():
    return fixtures.scenario("bench")


@pytest.fixture
def settings_env(settings_scenario):
    env = SimEnv(settings_scenario)
    env.reset("wifi", seed=0)
    return env
