import numpy as np
import pytest
from hypothesis import settings

from cavitybs.device import load_config

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

# acceptance results, filled by test_acceptance.py and echoed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def params():
    return load_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"AC{k:<2} {'PASS' if ok else 'FAIL'}  {detail}")
