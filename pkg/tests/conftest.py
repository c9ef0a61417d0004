import numpy as np
import pytest

from sclaw.grid import TorusGrid, make_initial
from sclaw.models import (NoiseMode, NoiseModel, SimConfig, additive_noise,
                          make_flux)


@pytest.fixture
def burgers():
    return make_flux("burgers")


@pytest.fixture
def two_mode_noise():
    """The shipped model: one multiplicative constant-profile mode plus
    one affine cosine mode."""
    return NoiseModel((
        NoiseMode(sigma=0.4, profile="constant", alpha=0.0, beta=1.0),
        NoiseMode(sigma=0.25, profile="cos", wavenumber=1, alpha=1.0,
                  beta=0.5),
    ))


@pytest.fixture
def sine_eta():
    return make_initial(TorusGrid(64), "sine", mean=0.0, amp=0.5, mode=1)


@pytest.fixture
def default_cfg():
    return SimConfig(epsilon=0.1, cells=64, seed=2024, dt=1.0 / 256,
                     cfl_fraction=0.9)


@pytest.fixture
def small_cfg():
    return SimConfig(epsilon=0.1, cells=32, seed=11, dt=1.0 / 128,
                     cfl_fraction=0.9)


@pytest.fixture
def small_eta():
    return make_initial(TorusGrid(32), "sine", mean=0.0, amp=0.5, mode=1)


@pytest.fixture
def unit_additive():
    return additive_noise(1.0)


def random_field(grid: TorusGrid, rng, lo=-1.0, hi=1.0):
    from sclaw.grid import ScalarField
    return ScalarField(grid, rng.uniform(lo, hi, size=grid.cells))
