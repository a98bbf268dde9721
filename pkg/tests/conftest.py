import numpy as np
import pytest

from _acceptance_report import RESULTS


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for tests that only need unstructured randomness."""
    return np.random.default_rng(20260816)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        passed, detail = RESULTS[k]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"CRITERION {k}: {verdict} - {detail}")
