import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# (criterion number, passed, detail) filled in by test_acceptance.py
ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bench():
    """The trained desk-scale benchmark (two models plus the branch), built once."""
    import benchmark
    return benchmark.run_all(progress=lambda msg: None)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
