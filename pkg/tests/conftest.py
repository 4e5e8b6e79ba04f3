import os

import numpy as np
import pytest
from hypothesis import settings

from fracnse import spectral as sp
from fracnse.dynamics import RandomSpectrum
from fracnse.spectral import Grid

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def grid16():
    return Grid.cube(16)


@pytest.fixture
def grid32():
    return Grid.cube(32)


def solenoidal_field(grid, seed, k_peak=3, slope=2.0):
    return RandomSpectrum(seed=seed, k_peak=k_peak, slope=slope).generate(grid)


def white_noise(grid, seed, ncomp=3):
    rng = np.random.default_rng(seed)
    shape = grid.shape if ncomp == 1 else (ncomp,) + grid.shape
    return rng.standard_normal(shape)


def single_mode(grid, m):
    """Real part of ``exp(i k.x)`` for integer mode ``m``."""
    x, y, z = grid.coords()
    phase = sum(2 * np.pi * mi / L * c for mi, L, c in zip(m, grid.lengths, (x, y, z)))
    return np.broadcast_to(np.cos(phase), grid.shape).copy()


def linf(f):
    return float(np.abs(f).max())




# lines registered by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


__all__ = ["solenoidal_field", "white_noise", "single_mode", "linf", "sp", "ACCEPTANCE_LINES"]
