import numpy as np
import pytest

from lacmatch.imagecore import GrayImage
from lacmatch.synthetic import synthetic_panorama


@pytest.fixture(scope="session")
def texture():
    return synthetic_panorama(320, 240, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h, w, lo=0, hi=256):
    return GrayImage(rng.integers(lo, hi, (h, w), dtype=np.uint8))


# one line per acceptance criterion, echoed after the run even when output is captured
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
