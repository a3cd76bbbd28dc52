import numpy as np
import pytest

from retarget_guidance.config import RunConfig


@pytest.fixture
def cfg():
    return RunConfig().validate()


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
