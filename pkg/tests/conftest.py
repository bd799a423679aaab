import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from distpgo import ScenarioSpec, generate_scenario
from distpgo.solvers import SolverConfig


def random_rotation(rng) -> np.ndarray:
    return ScipyRotation.random(random_state=np.random.RandomState(rng.integers(2**31))).as_matrix()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid4():
    spec = ScenarioSpec(kind="grid3d", robot_count=4, sigma_r_deg=5.0, sigma_t=0.2, rng_seed=7)
    return generate_scenario(spec)


@pytest.fixture(scope="session")
def grid4_noiseless():
    spec = ScenarioSpec(kind="grid3d", robot_count=4, sigma_r_deg=0.0, sigma_t=0.0, rng_seed=7)
    return generate_scenario(spec)


@pytest.fixture
def dgs_config():
    return SolverConfig(gamma=1.0, eta_r=1e-2, eta_p=1e-2, method="sor", flagged_init=True)
