import time

import numpy as np
import pytest

from syncnet.config import parse_config
from syncnet.presets import get_preset
from syncnet.simulation import compute_metrics, prepare_scenario, run_scenario

ACCEPTANCE = {}


class PresetRun:
    def __init__(self, name):
        self.cfg = parse_config(get_preset(name))
        start = time.perf_counter()
        self.network, self.setup = prepare_scenario(self.cfg)
        self.log = run_scenario(self.cfg, (self.network, self.setup))
        self.runtime = time.perf_counter() - start
        self.metrics = compute_metrics(self.log, **self.cfg.metrics)


@pytest.fixture(scope="session")
def preset_run():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = PresetRun(name)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def acceptance():
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""

    def record(number, title, passed, detail=""):
        ACCEPTANCE[number] = (title, bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number:2d}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
