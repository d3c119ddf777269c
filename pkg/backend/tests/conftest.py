import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.services.qcore import basis_state, mhz_2pi
from app.services.paths import xy_geodesic, lz_path

@pytest.fixture
def x_state():
    return basis_state("x")

@pytest.fixture
def y_state():
    return basis_state("y")

@pytest.fixture
def half_circle():
    return xy_geodesic(math.pi)

@pytest.fixture
def full_circle():
    return xy_geodesic(2 * math.pi)

@pytest.fixture
def lz():
    return lz_path(mhz_2pi(5.0), math.pi)

@pytest.fixture
def rng():
    return np.random.default_rng(20240601)

@pytest.fixture
def client():
    from app.main import app
    with TestClient(app) as c:
        yield c

@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "results"
