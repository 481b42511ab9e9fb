import numpy as np
import pytest
from hypothesis import settings

from fisherkin.grid import Distribution, make_grid, maxwellian

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid8():
    return make_grid(3, 8, 4.0)


@pytest.fixture(scope="session")
def grid16():
    return make_grid(3, 16, 6.0)


@pytest.fixture(scope="session")
def grid32():
    return make_grid(3, 32, 8.0)


@pytest.fixture(scope="session")
def unit_maxwellian32(grid32):
    return Distribution(grid32, maxwellian(grid32), "unit maxwellian")


@pytest.fixture(scope="session")
def fine_maxwellian():
    g = make_grid(3, 64, 6.0)
    return Distribution(g, maxwellian(g), "unit maxwellian, h = 0.1875")


@pytest.fixture(scope="session")
def bimodal16(grid16):
    vals = 0.5 * maxwellian(grid16, 1.0, [1.2, 0, 0], 0.8) + 0.5 * maxwellian(grid16, 1.0, [-1.2, 0, 0], 0.8)
    return Distribution(grid16, vals, "bimodal")


def smooth_field(grid, seed, width=1.0):
    """Positive random combination of a few Gaussians, compactly decaying."""
    rng = np.random.default_rng(seed)
    vals = np.zeros(grid.shape)
    for _ in range(3):
        c = rng.uniform(-1.0, 1.0, grid.d)
        T = rng.uniform(0.5, 1.2) * width
        vals += rng.uniform(0.2, 1.0) * maxwellian(grid, 1.0, c, T)
    return vals


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def criterion_report(request):
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
