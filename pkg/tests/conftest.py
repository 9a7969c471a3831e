import numpy as np
import pytest

from cvforecast.trajectory import SyntheticConfig, generate_synthetic

SMALL = SyntheticConfig(n_frames=600, target_vehicle_count=30, rng_seed=3)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(SMALL)


@pytest.fixture(scope="session")
def default_dataset():
    return generate_synthetic(SyntheticConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
