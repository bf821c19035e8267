import numpy as np
import pytest

from rfcascade.verify import smooth_field

# criterion number -> (passed, detail); filled by test_acceptance and printed at the end
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def field2():
    return smooth_field((96, 96), 1.0, seed=3)


@pytest.fixture(scope="session")
def field3():
    return smooth_field((40, 40, 40), 1.0, seed=4)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
