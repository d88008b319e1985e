import pytest
from hypothesis import settings

from hypsmooth import HalfStrip, HyperbolicSystem, PeriodicStrip
from hypsmooth.boundary import LinearReflection

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture
def pair():
    """Two decoupled constant speeds of opposite sign."""
    return HyperbolicSystem.build(2, 1, [1.0, -1.0], domain=HalfStrip(0.0))


@pytest.fixture
def coupled_periodic():
    """a = diag(1, -1), b12 = b21 = 1 on the periodic strip."""
    return HyperbolicSystem.build(2, 1, [1.0, -1.0], [[0, 1], [1, 0]], domain=PeriodicStrip())


@pytest.fixture
def quarter_reflection():
    """rho0 * rho1 = 1/4."""
    return LinearReflection([[0.5]], [[0.5]])


@pytest.fixture
def unit_reflection():
    return LinearReflection([[1.0]], [[1.0]])


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
