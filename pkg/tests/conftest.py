import warnings

import numpy as np
import pytest

from beamsight.config import load_scenario

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def scenario():
    return load_scenario()


@pytest.fixture
def report():
    """Record a one-line PASS/FAIL verdict for the acceptance summary."""

    def _report(criterion: int, name: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:>2} {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_clamp():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="orientation trace", category=RuntimeWarning)
        yield


def random_quaternion(rng: np.random.Generator):
    from beamsight.geometry import Quaternion

    return Quaternion.from_array(rng.normal(size=4))
