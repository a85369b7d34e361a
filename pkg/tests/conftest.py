import math

import numpy as np
import pytest

from flqr import build_grid
from flqr.suites import benchmark_problem, random_problem

_LINES: list[tuple[int, str, bool, str]] = []


def benchmark_value(alpha: float, T: float = 1.0, p: float = 1.0, r: float = 1.0, x0: float = 1.0) -> float:
    """Closed-form value of the scalar benchmark from a frozen initial state."""
    k = p / math.gamma(alpha) ** 2
    return p * r * x0**2 / (r + k * T ** (2 * alpha - 1) / (2 * alpha - 1))


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(number: int, label: str, passed: bool, detail: str = "") -> bool:
        _LINES.append((number, label, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, label, passed, detail in sorted(_LINES, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} [{status}] {label}: {detail}")


@pytest.fixture
def bench():
    return benchmark_problem(0.7)


@pytest.fixture
def small_grid():
    return build_grid(1.0, 32)


@pytest.fixture(params=[0, 1, 2])
def rand_prob(request):
    return random_problem(request.param, alpha=0.75)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
