import functools
import time

import pytest

from fieldscope.config import parse_config
from fieldscope.pipeline import run_experiment

# A scaled-down scenario for tests that exercise plumbing rather than accuracy.
SMALL = {
    "stages": [
        {"object": {"kind": "attractor-sqrt", "center": [0, 15]}, "n_trajectories": 12},
        {"object": {"kind": "attractor-gauss", "center": [-10, 10]}, "n_trajectories": 12},
        {"object": {"kind": "repeller-exp", "center": [0, -5]}, "n_trajectories": 12, "destinations": "alternate"},
    ],
    "train": {"max_epochs": 15, "restarts": 1},
}


@pytest.fixture
def small_config():
    return parse_config(SMALL)


RUN_SECONDS: dict[int, float] = {}


@functools.lru_cache(maxsize=None)
def default_run(seed: int):
    """Full default-scenario experiment, shared between test modules."""
    start = time.perf_counter()
    report = run_experiment(parse_config({}), seed=seed)
    RUN_SECONDS[seed] = time.perf_counter() - start
    return report


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
