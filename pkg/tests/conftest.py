import numpy as np
import pytest

from polaron.dynamics import CoupledSystem
from polaron.potentials import PotentialSpec
from polaron.spectral import FourierGrid3


@pytest.fixture(scope="session")
def gauss():
    return PotentialSpec.gaussian(1.0, 1.0)


@pytest.fixture(scope="session")
def grid32():
    return FourierGrid3(32, 16.0)


@pytest.fixture(scope="session")
def grid64():
    return FourierGrid3(64, 32.0)


@pytest.fixture(scope="session")
def model32(grid32, gauss):
    return CoupledSystem(grid32, gauss)


@pytest.fixture
def rng():
    return np.random.default_rng(20260117)


def smooth_random_field(grid, rng, width=1.5, scale=1.0):
    """Complex field with Gaussian spectrum, well resolved on the grid."""
    noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    spec = np.fft.fftn(noise) * np.exp(-0.5 * (width * grid.xi_norm) ** 2)
    data = np.fft.ifftn(spec)
    return scale * data / np.max(np.abs(data))


# one line per acceptance criterion, collected by test_acceptance and echoed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
