from __future__ import annotations

import os
from datetime import datetime, timezone
from pathlib import Path

import pytest

from govgate.config import data_root
from govgate.policy import compile_rule_set, load_rule_set

T0 = datetime(2025, 5, 1, 13, 0, tzinfo=timezone.utc)


@pytest.fixture(scope="session", autouse=True)
def scratch_cwd(tmp_path_factory):
    """Run from a scratch directory so relative outputs never land in the checkout."""
    old = os.getcwd()
    os.chdir(tmp_path_factory.mktemp("cwd"))
    yield
    os.chdir(old)


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return data_root()


@pytest.fixture(scope="session")
def trading_rules(data_dir):
    return compile_rule_set(load_rule_set(data_dir / "packs" / "trading.json", domain="trading"))


@pytest.fixture(scope="session")
def essay_rules(data_dir):
    return compile_rule_set(load_rule_set(data_dir / "packs" / "essay.json", domain="essay"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    results = item.config._criteria
    ok = report.passed and results.get(number, (title, True))[1]
    if report.when == "call" or not report.passed:
        results[number] = (title, ok)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok = results[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {title}")
