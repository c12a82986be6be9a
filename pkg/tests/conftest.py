import numpy as np
import pytest

from geopot import ParamVector, SiteSet


@pytest.fixture
def square_sites():
    """Four instruments on the unit square, all reading 10."""
    coords = np.array([[0.2, 0.2], [0.2, 0.8], [0.8, 0.2], [0.8, 0.8]])
    return SiteSet(coords, np.full(4, 10.0), None)


@pytest.fixture
def square_params():
    """Noise-free configuration: potential is the latent field itself."""
    return ParamVector(0.0, np.zeros(0), 0.0, 1.0, 0.8, 0.3,
                       mu_fixed_zero=True)


def random_sites(seed, n, b=2, extent=1000.0, n_missing=0):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0, extent, size=(n, 2))
    X = rng.uniform(0, 1, size=(n, b))
    y = rng.normal(5.0, 2.0, size=n)
    if n_missing:
        y[rng.choice(n, size=n_missing, replace=False)] = np.nan
    return SiteSet(coords, y, X)


def random_params(seed, b=2, scale=1000.0):
    rng = np.random.default_rng(seed + 1000)
    return ParamVector(mu=rng.normal(2, 1),
                       beta=rng.normal(0, 2, size=b),
                       sigma2_eps=rng.uniform(0.2, 1.5),
                       gamma=rng.uniform(0.5, 3.0),
                       theta=rng.uniform(0.1, 0.5) * scale,
                       phi=rng.uniform(0.05, 0.2) * scale)
