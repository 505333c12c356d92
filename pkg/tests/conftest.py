import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hystfem.femcore import Discretization
from hystfem.material import MaterialModel
from hystfem.mesh import generate_tjoint

# numba compiles on first call, so the first example of a property can be slow
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def tjoint():
    return generate_tjoint()


@pytest.fixture(scope="session")
def tjoint_disc(tjoint):
    return Discretization(tjoint)


@pytest.fixture(scope="session")
def five_cell():
    return MaterialModel.five_cell(form_coeff=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
