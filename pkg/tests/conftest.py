import numpy as np
import pytest
from hypothesis import settings

from separapde.problems import pointload, sinsin

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sinsin2d():
    return sinsin(2)


@pytest.fixture(scope="session")
def point2d():
    return pointload(2)


def random_nodes(rng, n, a=0.0, b=1.0):
    """Strictly increasing nodes with fixed endpoints and no tiny gaps."""
    gaps = rng.uniform(0.3, 1.0, n - 1)
    x = a + (b - a) * np.concatenate([[0.0], np.cumsum(gaps)]) / gaps.sum()
    x[-1] = b
    return x


def central_diff(f, x, step=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2 * step)
    return g
