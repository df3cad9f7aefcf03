import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from superdensity import scenario

settings.register_profile(
    "repro",
    max_examples=100,
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repro")

SESSION_START = time.monotonic()
ACCEPTANCE_LINES: list[str] = []
PROPERTY_OUTCOMES: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "property: randomized invariant check (100 instances, fixed seed)")
    config.addinivalue_line("markers", "acceptance: acceptance criterion")


def pytest_collection_modifyitems(session, config, items):
    # acceptance last, so criterion 9 can read the property outcomes of this session
    items.sort(key=lambda it: it.get_closest_marker("acceptance") is not None)


def pytest_runtest_logreport(report):
    if report.when == "call" and "property" in report.keywords:
        PROPERTY_OUTCOMES[report.nodeid] = report.passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


class BundledRuns:
    """Each bundled scenario is run once per session and shared."""

    def __init__(self, root: Path):
        self.root = root
        self.results = {}
        self.seconds = {}

    def get(self, name: str) -> scenario.RunResult:
        if name not in self.results:
            t = time.monotonic()
            self.results[name] = scenario.run_scenario(name, out=str(self.root / "first" / name))
            self.seconds[name] = time.monotonic() - t
        return self.results[name]


@pytest.fixture(scope="session")
def bundled(tmp_path_factory):
    return BundledRuns(tmp_path_factory.mktemp("bundled"))
