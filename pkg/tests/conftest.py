import math

import numpy as np
import pytest


def binomial_z(successes: int, trials: int, p: float) -> float:
    """Standard score of an observed count against Binomial(trials, p)."""
    sd = math.sqrt(trials * p * (1.0 - p))
    if sd == 0.0:
        return 0.0 if successes == trials * p else math.inf
    return (successes - trials * p) / sd


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts on its own."""

    def record(label: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE.append((label, bool(passed), detail))
        print(f"criterion {label}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"criterion {label:>4}: {'PASS' if passed else 'FAIL'}  {detail}")
