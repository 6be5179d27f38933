from __future__ import annotations

import numpy as np
import pytest

from factsplace.grid import case30
from factsplace.optimizer import PlacementOptions, base_opf, place, scale_scenario
from factsplace.powerflow import alpha_c


@pytest.fixture(scope="session")
def grid30():
    return case30()


@pytest.fixture(scope="session")
def p30(grid30):
    return base_opf(grid30)


@pytest.fixture(scope="session")
def ac30(grid30, p30):
    return alpha_c(grid30, p30)[0]


@pytest.fixture(scope="session")
def placed30(grid30, p30, ac30):
    """Improved placements on case30 keyed by alpha / alpha_c."""
    cache = {}

    def get(ratio):
        if ratio not in cache:
            sc = scale_scenario(p30, ratio * ac30)
            cache[ratio] = (sc, place(grid30, [sc], PlacementOptions()))
        return cache[ratio]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.lines():
            terminalreporter.write_line(line)
