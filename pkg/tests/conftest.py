import numpy as np
import pytest

from moencoder.circulator import CirculatorModel, calibrate_lumped_K
from moencoder.encoder import build_calibration
from moencoder.sweep import default_rotor


@pytest.fixture(scope="session")
def rotor():
    return default_rotor()


@pytest.fixture(scope="session")
def model(rotor):
    """Default circulator with K fitted to 0.3 deg at the default noise."""
    return calibrate_lumped_K(CirculatorModel(), 0.017, 0.3, rotor)


@pytest.fixture(scope="session")
def table(model, rotor):
    return build_calibration(model, rotor)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
