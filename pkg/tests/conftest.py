import numpy as np
import pytest

from sisifus.core import Plane


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def lifetime_plane(values):
    return Plane(values=np.asarray(values, dtype=np.float64),
                 role="lifetime", units="ns")


def intensity_plane(values):
    return Plane(values=np.asarray(values, dtype=np.float64),
                 role="intensity", units="photon counts")
