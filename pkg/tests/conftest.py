import numpy as np
import pytest


def rel_err(analytic, numeric, floor=1e-3):
    """Largest entrywise relative error.

    Entries smaller than ``floor`` times the largest gradient entry are
    measured against that level, so finite-difference round-off on
    near-zero components does not dominate.
    """
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    level = floor * max(np.max(np.abs(b)), 1e-12)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), level)
    return float(np.max(np.abs(a - b) / scale))


def central_diff(f, x, step=1e-5):
    """Central finite differences of scalar ``f`` at array ``x`` (same shape as ``x``)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f(x)
        flat[i] = old - step
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
