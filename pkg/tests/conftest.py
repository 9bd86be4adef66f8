import numpy as np
import pytest

from rfmap import geoscene
from rfmap.geoscene import Scene, Wall


@pytest.fixture(scope="session")
def default_scene() -> Scene:
    return geoscene.synthesize_scene(1)


@pytest.fixture(scope="session")
def default_dataset(default_scene):
    return geoscene.generate_dataset(default_scene, 1.0, 3)


@pytest.fixture(scope="session")
def open_scene() -> Scene:
    return Scene(tx=(32.0, 32.0, 10.0), bounds=(0.0, 0.0, 64.0, 64.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blocking_scene() -> Scene:
    """A tall wall across x = 20 between a transmitter at x = 10 and receivers beyond."""
    return Scene(tx=(10.0, 32.0, 10.0), bounds=(0.0, 0.0, 64.0, 64.0),
                 walls=(Wall((20.0, 0.0), (20.0, 64.0), 50.0, 0.5),))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
