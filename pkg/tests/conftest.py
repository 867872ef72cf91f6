import numpy as np
import pytest


def random_spd(rng, n, shift=1.0):
    m = rng.normal(size=(n, n))
    return m.T @ m + shift * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def setup():
    from rgpmpc.config import Scenario
    from rgpmpc.experiment import build_setup
    return build_setup(Scenario())
