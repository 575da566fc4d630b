"""Shared fixtures: baseline statistics and scenario sweeps are expensive,
so they are computed once per session and reused."""

from __future__ import annotations

import pytest

from track_sentinel import pipeline
from track_sentinel.config import load_config

ACCEPTANCE_SPEEDS = 20

_acceptance_lines: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    _acceptance_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_acceptance_lines):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def baseline_stats():
    """Thresholds from the baseline preset (20 bump-free runs)."""
    return pipeline.calibrate(load_config("baseline"))


class ScenarioRuns:
    """Lazily simulated runs of a preset, keyed by scenario name."""

    def __init__(self, stats):
        self.stats = stats
        self._cache = {}

    def __call__(self, name: str, count: int = ACCEPTANCE_SPEEDS):
        key = (name, count)
        if key not in self._cache:
            cfg = load_config(name)
            speeds = cfg.speed.speeds(cfg.seed, count)
            self._cache[key] = [
                pipeline.execute_run(cfg, k, sp, stats=self.stats) for k, sp in enumerate(speeds)
            ]
        return self._cache[key]


@pytest.fixture(scope="session")
def scenario_runs(baseline_stats):
    return ScenarioRuns(baseline_stats)
