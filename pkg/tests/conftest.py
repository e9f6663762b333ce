import numpy as np
import pytest
from hypothesis import settings

import sf_sampler as sf

settings.register_profile("slowbox", deadline=None, max_examples=50)
settings.load_profile("slowbox")


@pytest.fixture(scope="session")
def std_gaussian():
    # phi identically 1: the target equals the reference heat kernel
    return sf.make_gaussian_target(sf.GaussianParams(mean=[0.0], variance=1.0), 1.0)


@pytest.fixture(scope="session")
def shifted_gaussian():
    # m = 2, s2 = T = 1: log phi(y) = 2y - 2
    return sf.make_gaussian_target(sf.GaussianParams(mean=[2.0], variance=1.0), 1.0)


@pytest.fixture(scope="session")
def narrow_gaussian():
    # s2 = 0.25 < T = 1: log phi(y) = -1.5 y^2 + 0.5 log 4
    return sf.make_gaussian_target(sf.GaussianParams(mean=[0.0], variance=0.25), 1.0)


@pytest.fixture(scope="session")
def symmetric_mixture():
    # certified Lipschitz constant 2
    return sf.make_gaussian_mixture_target([(0.5, -2.0), (0.5, 2.0)], 1.0)


@pytest.fixture(scope="session")
def unit_kde():
    return sf.make_triangular_kde_target(
        sf.TriangularKdeParams(centers=[0.0], bandwidth=1.0), 1.0
    )


@pytest.fixture(scope="session")
def three_kde():
    return sf.make_triangular_kde_target(
        sf.TriangularKdeParams(centers=[-1.0, 0.0, 1.0], bandwidth=0.5), 1.0
    )


@pytest.fixture(scope="session")
def warm_kernels():
    from sf_sampler._kernels import warm_up

    warm_up()


def finite_diff_grad(f, y, step=1e-5):
    y = np.asarray(y, dtype=float)
    g = np.zeros_like(y)
    for k in range(y.size):
        e = np.zeros_like(y)
        e[k] = step
        g[k] = (f(y + e) - f(y - e)) / (2.0 * step)
    return g
