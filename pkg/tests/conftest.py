import numpy as np
import pytest

from mfldp import MultiPoly, Path, RadialInteraction, TimeGrid

_ACCEPTANCE = []


@pytest.fixture
def acceptance_line():
    """Record a one-line verdict for the terminal summary."""

    def record(number, passed, detail):
        _ACCEPTANCE.append((number, passed, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def quad():
    """V(x) = x^2/2 and F(x) = |x|^2 in one dimension."""
    return MultiPoly.from_terms([(0.5, [2])]), RadialInteraction((1.0,))


@pytest.fixture
def bench_path():
    def make(n=256):
        return Path.constant(TimeGrid(1.0, n), [1.0])

    return make


def central_difference(fun, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g
