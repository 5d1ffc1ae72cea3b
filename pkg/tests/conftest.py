import numpy as np
import pytest

from mqclab import grids, models


@pytest.fixture(scope="session")
def dac():
    return models.dac_model()


@pytest.fixture(scope="session")
def dac_grid_p40():
    """Production grid of the P0=40 benchmark (N=1201)."""
    return grids.build_grid(-15.0, 40.0, 0.25, 2, 0.05)


@pytest.fixture(scope="session")
def coarse_grid_p40():
    """Cheap DAC test grid: k=1 keeps N at 441."""
    return grids.build_grid(-15.0, 40.0, 0.25, 1, 0.25)


@pytest.fixture(scope="session")
def wide_test_grid():
    """Small box with generous momentum coverage (~10 sigma_p each side)."""
    return grids.build_grid(-4.0, 2.0, 0.5, 2, 0.25)


def make_packet(grid, r0, p0, sigma_r, theta=0.0, basis="adiabatic"):
    spec = grids.GaussianSpec(r0, p0, sigma_r, theta)
    return grids.gaussian_packet(spec, grid, basis)


@pytest.fixture(scope="session")
def packet_p40(dac_grid_p40):
    return make_packet(dac_grid_p40, -15.0, 40.0, 0.25)
