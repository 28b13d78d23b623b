import numpy as np
import pytest

from hhbem.kernels import assemble
from hhbem.mesh import cube, ellipsoid, icosphere

MESHES = {
    "ico1": lambda: icosphere(1),
    "ico2": lambda: icosphere(2),
    "ico3": lambda: icosphere(3),
    "ico4": lambda: icosphere(4),
    "ell2": lambda: ellipsoid((1.0, 1.0, 1.5), 2),
    "ell3": lambda: ellipsoid((1.0, 1.0, 1.5), 3),
    "cube1": lambda: cube(2.0, 1),
    "cube2": lambda: cube(2.0, 2),
    "cube3": lambda: cube(2.0, 3),
}


class OperatorCache:
    """Assemble each test mesh at most once per session."""

    def __init__(self):
        self._ops = {}

    def __call__(self, name):
        if name not in self._ops:
            self._ops[name] = assemble(MESHES[name]())
        return self._ops[name]


@pytest.fixture(scope="session")
def operators():
    return OperatorCache()


@pytest.fixture(scope="session")
def ico2(operators):
    return operators("ico2")


@pytest.fixture(scope="session")
def ico3(operators):
    return operators("ico3")


@pytest.fixture(scope="session")
def cube1(operators):
    return operators("cube1")


@pytest.fixture(scope="session")
def cube2(operators):
    return operators("cube2")


@pytest.fixture(scope="session")
def ell2(operators):
    return operators("ell2")


@pytest.fixture
def wnorm():
    def f(w, a):
        a = np.asarray(a)
        if a.ndim >= 2 and a.shape[-1] in (2, 3) and a.shape[-2] == len(w):
            return np.sqrt(np.sum(w[:, None] * a * a, axis=(-2, -1)))
        return np.sqrt(np.sum(w * a * a, axis=-1))

    return f
