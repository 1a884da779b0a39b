import pytest

from phi4lab.config import parse_config
from phi4lab.experiments import run_scenario

_LINES: list[str] = []


class ScenarioCache:
    """Runs each scenario at most once per session."""

    def __init__(self, root):
        self.root = root
        self.cfg = parse_config()
        self.results = {}

    def get(self, name):
        if name not in self.results:
            self.results[name] = run_scenario(name, self.cfg, self.root)
        return self.results[name]


@pytest.fixture(scope="session")
def scenarios(tmp_path_factory):
    return ScenarioCache(tmp_path_factory.mktemp("acceptance"))


@pytest.fixture(scope="session")
def report():
    def emit(line):
        print(line)
        _LINES.append(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
