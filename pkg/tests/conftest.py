import numpy as np
import pytest
from hypothesis import settings

from torlab.shapes import make_body
from torlab.sphere import build_grid

settings.register_profile("ci", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def circle256():
    return build_grid(2, 256)


@pytest.fixture(scope="session")
def circle128():
    return build_grid(2, 128)


@pytest.fixture(scope="session")
def sphere32():
    return build_grid(3, (32, 64))


@pytest.fixture(scope="session")
def disk(circle256):
    return make_body(circle256, {"kind": "ball"})


@pytest.fixture(scope="session")
def ellipse21(circle256):
    return make_body(circle256, {"kind": "ellipse", "axes": [2.0, 1.0]})


def angle_of(x):
    x = np.atleast_2d(x)
    return np.arctan2(x[:, 1], x[:, 0])
