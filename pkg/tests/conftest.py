import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gausselim.sde import StepSizeWarning

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_step_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        yield


def random_density(d, rng, rank=None):
    rank = rank or d
    X = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = X @ X.conj().T
    return rho / np.trace(rho).real


def random_operator(d, rng):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance item and echo it immediately."""

    def record(label: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append((label, bool(passed), detail))
        with capsys.disabled():
            print(f"\n{label} {'PASS' if passed else 'FAIL'}: {detail}")
        return bool(passed)

    return record


def _criterion_key(label: str):
    head = label.split()[1] if label.startswith("criterion") else label
    digits = "".join(ch for ch in head if ch.isdigit())
    return (int(digits) if digits else 99, label)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda x: _criterion_key(x[0])):
        terminalreporter.write_line(f"{label} {'PASS' if passed else 'FAIL'}: {detail}")
