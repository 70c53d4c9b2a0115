import numpy as np
import pytest

from zonotube.simbench import ScenarioConfig, build_scenario


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte-Carlo checks")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def case_cfg():
    return ScenarioConfig(T=20, alpha=0.7, seed=0)


@pytest.fixture(scope="session")
def case_scenario(case_cfg):
    sc = build_scenario(case_cfg)
    assert sc.error is None
    return sc


ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def _report(num: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}"
        ACCEPTANCE_LINES[num] = line
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
