import numpy as np
import pytest

from fortomo.geometry import make_height_grid, steering_matrix, synthesize_geometry


@pytest.fixture(scope="session")
def grid512():
    return make_height_grid(-20.0, 40.0, 512)


@pytest.fixture(scope="session")
def geom15():
    return synthesize_geometry(6, 15.0)


@pytest.fixture(scope="session")
def steer15(geom15, grid512):
    return steering_matrix(geom15, grid512)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
