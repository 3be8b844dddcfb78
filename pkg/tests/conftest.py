import numpy as np
import pytest


def brute_similarity(d, d_star, k):
    """Indicator definition evaluated pair by pair."""
    d = np.asarray(d, dtype=float).reshape(len(d), -1)
    e = np.asarray(d_star, dtype=float).reshape(len(d_star), -1)

    def radii(c):
        out = []
        for i in range(len(c)):
            others = sorted(np.linalg.norm(c[i] - c[j]) for j in range(len(c)) if j != i)
            out.append(others[k - 1])
        return out

    rd, re = radii(d), radii(e)
    i1 = [any(np.linalg.norm(d[i] - e[j]) < rd[i] for i in range(len(d))) for j in range(len(e))]
    i2 = [any(np.linalg.norm(d[i] - e[j]) < re[j] for j in range(len(e))) for i in range(len(d))]
    return 0.5 * (np.mean(i1) + np.mean(i2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one pass/fail line; the lines are repeated in the terminal summary."""
    def _report(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
