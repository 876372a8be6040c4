import logging
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "kinflow", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("kinflow")

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture(autouse=True)
def _quiet_dt_warning():
    logging.getLogger("kinflow.flow").setLevel(logging.ERROR)
    yield


@pytest.fixture
def configs_dir():
    return CONFIGS


@pytest.fixture
def acceptance():
    """``acceptance(k, ok, detail)`` logs criterion k and prints its line."""

    def report(k, ok, detail):
        ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
